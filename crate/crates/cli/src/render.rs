use qesim::Pattern;

/// Column chart of a pattern, `width` columns by `height` rows.
pub fn pattern(p: &Pattern, width: usize, height: usize) -> String {
    let values = p.intensities();
    if values.is_empty() || width == 0 || height == 0 {
        return String::new();
    }
    let cols = width.min(values.len());
    let cells: Vec<f64> = (0..cols)
        .map(|c| {
            let lo = c * values.len() / cols;
            let hi = ((c + 1) * values.len() / cols).max(lo + 1);
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let max = cells.iter().copied().fold(0.0, f64::max);
    let mut out = String::new();
    for row in (0..height).rev() {
        let level = (row as f64 + 0.5) / height as f64;
        out.push('|');
        for v in &cells {
            out.push(if max > 0.0 && v / max >= level { '#' } else { ' ' });
        }
        out.push('\n');
    }
    out.push('+');
    out.push_str(&"-".repeat(cols));
    out.push('\n');
    out
}

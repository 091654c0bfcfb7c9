//! Minimal SVG line plot for forecasts. Optional output only; every
//! analysis is complete as CSV without it.

use cyclegp_core::ageing::CapacityForecast;

const W: f64 = 720.0;
const H: f64 = 480.0;
const MARGIN: f64 = 50.0;

pub fn forecast_svg(forecast: &CapacityForecast, title: &str) -> String {
    let xs: Vec<f64> = forecast.points.iter().map(|p| p.ah).collect();
    let lo: Vec<f64> = forecast
        .points
        .iter()
        .map(|p| p.q_mean - 2.0 * p.q_sigma)
        .collect();
    let hi: Vec<f64> = forecast
        .points
        .iter()
        .map(|p| p.q_mean + 2.0 * p.q_sigma)
        .collect();
    let x_max = xs.last().copied().unwrap_or(1.0).max(1.0);
    let y_min = lo.iter().cloned().fold(f64::INFINITY, f64::min).min(100.0) - 1.0;
    let y_max = hi.iter().cloned().fold(100.0f64, f64::max) + 1.0;

    let sx = |x: f64| MARGIN + (W - 2.0 * MARGIN) * x / x_max;
    let sy = |y: f64| H - MARGIN - (H - 2.0 * MARGIN) * (y - y_min) / (y_max - y_min);

    let path = |ys: &[f64]| -> String {
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let band: String = {
        let mut pts: Vec<String> = xs
            .iter()
            .zip(&hi)
            .map(|(&x, &y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        pts.extend(
            xs.iter()
                .zip(&lo)
                .rev()
                .map(|(&x, &y)| format!("{:.1},{:.1}", sx(x), sy(y))),
        );
        pts.join(" ")
    };

    let mean: Vec<f64> = forecast.points.iter().map(|p| p.q_mean).collect();
    format!(
        concat!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
            r#"<rect width="{w}" height="{h}" fill="white"/>"#,
            r#"<text x="{tx}" y="24" font-family="sans-serif" font-size="14">{title}</text>"#,
            r#"<polygon points="{band}" fill="lightsteelblue" opacity="0.6"/>"#,
            r#"<polyline points="{mean}" fill="none" stroke="navy" stroke-width="2"/>"#,
            r#"<line x1="{m}" y1="{ybase}" x2="{xend}" y2="{ybase}" stroke="black"/>"#,
            r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{ybase}" stroke="black"/>"#,
            r#"<text x="{xmid}" y="{h2}" font-family="sans-serif" font-size="12">Ah throughput</text>"#,
            r#"<text x="12" y="{ymid}" font-family="sans-serif" font-size="12" transform="rotate(-90 12 {ymid})">capacity [%]</text>"#,
            "</svg>\n"
        ),
        w = W,
        h = H,
        tx = MARGIN,
        title = title,
        band = band,
        mean = path(&mean),
        m = MARGIN,
        ybase = H - MARGIN,
        xend = W - MARGIN,
        xmid = W / 2.0 - 40.0,
        h2 = H - 12.0,
        ymid = H / 2.0,
    )
}

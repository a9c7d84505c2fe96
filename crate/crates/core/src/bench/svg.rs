//! Minimal deterministic SVG line charts. Identical input tables produce
//! byte-identical files: no timestamps, no randomness, fixed float widths.

use std::fmt::Write as _;

use super::{BenchError, SuccessRow, TimingRow};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Render a chart to SVG text. Errors on non-finite coordinates.
pub fn render_line_chart(chart: &LineChart) -> Result<String, BenchError> {
    for s in &chart.series {
        if s.points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(BenchError::MalformedTable(format!(
                "series {:?} contains non-finite points",
                s.name
            )));
        }
    }
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (0.0f64, f64::NEG_INFINITY);
    for s in &chart.series {
        for &(x, y) in &s.points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !x_min.is_finite() {
        // No data: draw axes over a unit range.
        x_min = 0.0;
        x_max = 1.0;
        y_max = 1.0;
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max <= y_min {
        y_max = y_min + 1.0;
    }
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| MARGIN_T + plot_h - (y - y_min) / (y_max - y_min) * plot_h;

    let mut out = String::new();
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    )
    .unwrap();
    writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>").unwrap();
    writeln!(
        out,
        "<text x=\"{}\" y=\"22\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
        fmt(MARGIN_L + plot_w / 2.0),
        escape(&chart.title)
    )
    .unwrap();

    // Axes.
    writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        fmt(MARGIN_L),
        fmt(MARGIN_T),
        fmt(MARGIN_L),
        fmt(MARGIN_T + plot_h)
    )
    .unwrap();
    writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        fmt(MARGIN_L),
        fmt(MARGIN_T + plot_h),
        fmt(MARGIN_L + plot_w),
        fmt(MARGIN_T + plot_h)
    )
    .unwrap();

    // Ticks and grid.
    for i in 0..=4 {
        let u = i as f64 / 4.0;
        let x = x_min + u * (x_max - x_min);
        let y = y_min + u * (y_max - y_min);
        writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>",
            fmt(sx(x)),
            fmt(MARGIN_T),
            fmt(sx(x)),
            fmt(MARGIN_T + plot_h)
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            fmt(sx(x)),
            fmt(MARGIN_T + plot_h + 16.0),
            fmt(x)
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            fmt(MARGIN_L - 6.0),
            fmt(sy(y) + 4.0),
            fmt(y)
        )
        .unwrap();
    }
    writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        fmt(MARGIN_L + plot_w / 2.0),
        fmt(HEIGHT - 12.0),
        escape(&chart.x_label)
    )
    .unwrap();
    writeln!(
        out,
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        fmt(MARGIN_T + plot_h / 2.0),
        fmt(MARGIN_T + plot_h / 2.0),
        escape(&chart.y_label)
    )
    .unwrap();

    // Series polylines and legend.
    for (i, s) in chart.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !s.points.is_empty() {
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{},{}", fmt(sx(x)), fmt(sy(y))))
                .collect();
            writeln!(
                out,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
                pts.join(" ")
            )
            .unwrap();
            for &(x, y) in &s.points {
                writeln!(
                    out,
                    "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>",
                    fmt(sx(x)),
                    fmt(sy(y))
                )
                .unwrap();
            }
        }
        let ly = MARGIN_T + 14.0 + i as f64 * 18.0;
        writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            fmt(WIDTH - MARGIN_R + 10.0),
            fmt(ly),
            fmt(WIDTH - MARGIN_R + 34.0),
            fmt(ly)
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            fmt(WIDTH - MARGIN_R + 40.0),
            fmt(ly + 4.0),
            escape(&s.name)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Success-rate chart from parsed success rows.
pub fn success_chart(title: &str, rows: &[SuccessRow]) -> LineChart {
    let mut series: Vec<Series> = Vec::new();
    for r in rows {
        match series.iter_mut().find(|s| s.name == r.variant) {
            Some(s) => s.points.push((r.cycle as f64, r.success_rate)),
            None => series.push(Series {
                name: r.variant.clone(),
                points: vec![(r.cycle as f64, r.success_rate)],
            }),
        }
    }
    LineChart {
        title: title.to_string(),
        x_label: "feedback cycle".into(),
        y_label: "success rate".into(),
        series,
    }
}

/// Wall-time chart from timing rows.
pub fn timing_chart(title: &str, rows: &[TimingRow]) -> LineChart {
    let mut series: Vec<Series> = Vec::new();
    for r in rows {
        match series.iter_mut().find(|s| s.name == r.variant) {
            Some(s) => s.points.push((r.cycle as f64, r.mean_s)),
            None => series.push(Series {
                name: r.variant.clone(),
                points: vec![(r.cycle as f64, r.mean_s)],
            }),
        }
    }
    LineChart {
        title: title.to_string(),
        x_label: "feedback cycle".into(),
        y_label: "mean step time (s)".into(),
        series,
    }
}

/// Build a chart straight from CSV text, dispatching on the schema line.
pub fn chart_from_csv(text: &str, title: &str) -> Result<LineChart, BenchError> {
    let table = super::csv::read_table(text)?;
    match table.schema.as_str() {
        super::csv::SUCCESS_SCHEMA => {
            let v = table.column("variant")?;
            let c = table.column("cycle")?;
            let s = table.column("success_rate")?;
            let rows: Result<Vec<SuccessRow>, BenchError> = table
                .rows
                .iter()
                .map(|r| {
                    Ok(SuccessRow {
                        variant: r[v].clone(),
                        cycle: r[c]
                            .parse()
                            .map_err(|e| BenchError::MalformedTable(format!("cycle: {e}")))?,
                        success_rate: table.f64_cell(r, s)?,
                    })
                })
                .collect();
            Ok(success_chart(title, &rows?))
        }
        super::csv::TIMING_SCHEMA => {
            let v = table.column("variant")?;
            let c = table.column("cycle")?;
            let m = table.column("mean_s")?;
            let sd = table.column("std_s")?;
            let runs = table.column("runs")?;
            let rows: Result<Vec<TimingRow>, BenchError> = table
                .rows
                .iter()
                .map(|r| {
                    Ok(TimingRow {
                        variant: r[v].clone(),
                        cycle: r[c]
                            .parse()
                            .map_err(|e| BenchError::MalformedTable(format!("cycle: {e}")))?,
                        mean_s: table.f64_cell(r, m)?,
                        std_s: table.f64_cell(r, sd)?,
                        runs: r[runs]
                            .parse()
                            .map_err(|e| BenchError::MalformedTable(format!("runs: {e}")))?,
                    })
                })
                .collect();
            Ok(timing_chart(title, &rows?))
        }
        super::csv::MEMORY_SCHEMA => {
            let d = table.column("demos")?;
            let data = table.column("dataset_bytes")?;
            let poe = table.column("poe_bytes")?;
            let mut dataset = Series {
                name: "dataset".into(),
                points: Vec::new(),
            };
            let mut scheme = Series {
                name: "poe scheme".into(),
                points: Vec::new(),
            };
            for r in &table.rows {
                let x = table.f64_cell(r, d)?;
                dataset.points.push((x, table.f64_cell(r, data)?));
                scheme.points.push((x, table.f64_cell(r, poe)?));
            }
            Ok(LineChart {
                title: title.to_string(),
                x_label: "demonstrations".into(),
                y_label: "bytes".into(),
                series: vec![dataset, scheme],
            })
        }
        other => Err(BenchError::MalformedTable(format!(
            "no chart for schema {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_chart() -> LineChart {
        LineChart {
            title: "methods".into(),
            x_label: "cycle".into(),
            y_label: "success".into(),
            series: vec![
                Series {
                    name: "poe".into(),
                    points: vec![(0.0, 0.1), (1.0, 0.5), (2.0, 0.9)],
                },
                Series {
                    name: "moe".into(),
                    points: vec![(0.0, 0.1), (1.0, 0.3), (2.0, 0.6)],
                },
                Series {
                    name: "neg_weight".into(),
                    points: vec![(0.0, 0.1), (1.0, 0.2), (2.0, 0.5)],
                },
            ],
        }
    }

    #[test]
    fn three_series_three_polylines_with_legend() {
        let svg = render_line_chart(&sample_chart()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("poe"));
        assert!(svg.contains("moe"));
        assert!(svg.contains("neg_weight"));
    }

    #[test]
    fn empty_chart_is_axes_only() {
        let chart = LineChart {
            title: "empty".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![],
        };
        let svg = render_line_chart(&chart).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 0);
        assert!(svg.matches("<line").count() >= 2);
    }

    #[test]
    fn rendering_is_byte_stable() {
        let a = render_line_chart(&sample_chart()).unwrap();
        let b = render_line_chart(&sample_chart()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_points_are_rejected() {
        let chart = LineChart {
            title: "bad".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series {
                name: "s".into(),
                points: vec![(0.0, f64::NAN)],
            }],
        };
        assert!(matches!(
            render_line_chart(&chart),
            Err(BenchError::MalformedTable(_))
        ));
    }

    #[test]
    fn chart_from_success_csv() {
        let csv = "# nfil-success-v1\nvariant,cycle,success_rate\npoe,0,0.1\npoe,1,0.8\nmoe,0,0.1\n";
        let chart = chart_from_csv(csv, "t").unwrap();
        assert_eq!(chart.series.len(), 2);
        assert_eq!(chart.series[0].points.len(), 2);
        let svg = render_line_chart(&chart).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}

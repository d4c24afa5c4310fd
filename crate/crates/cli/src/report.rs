//! Figures rendered from the CSV artifacts of a run. A missing input file
//! skips its figures with a warning; everything else is an error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use repscope_core::stats::pearson;

use crate::error::{CliError, Result};
use crate::pipeline::{
    CONCEPT_CORRELATIONS_CSV, CONCEPT_PROJECTIONS_CSV, FIGURES_DIR, GDV_CSV, LABEL_STRATEGIES, PROJECTIONS_DIR,
    PROJECTION_CORRELATIONS_CSV, PROJECTION_GDV_CSV, RSA_GRID_CSV,
};
use crate::svg::{diverging, padded_range, sequential, tick_label, Axes, Svg, PALETTE};
use crate::table::Table;

/// Distinct values in order of first appearance.
fn distinct<'a>(values: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for v in values {
        if !out.iter().any(|o| o == v) {
            out.push(v.to_string());
        }
    }
    out
}

/// Index of the first language layer directly after a vision layer.
pub fn component_boundary(layers: &[String]) -> Option<usize> {
    layers
        .windows(2)
        .position(|w| w[0].starts_with("vit.") && w[1].starts_with("llm."))
        .map(|i| i + 1)
}

fn read_optional(path: &Path) -> Result<Option<Table>> {
    if !path.exists() {
        warn!("{} not found; skipping its figures", path.display());
        return Ok(None);
    }
    Table::read(path).map(Some)
}

fn write_svg(path: &Path, svg: Svg, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(path, svg.finish()).map_err(|e| CliError::io(path, e))?;
    written.push(path.to_path_buf());
    Ok(())
}

/// File-name-safe version of an id.
fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' { c } else { '_' }).collect()
}

/// Renders every figure whose inputs exist under `artifact_dir` into
/// `artifact_dir/figures`. Returns the files written, in a fixed order.
pub fn render_figures(artifact_dir: &Path) -> Result<Vec<PathBuf>> {
    let fig_dir = artifact_dir.join(FIGURES_DIR);
    fs::create_dir_all(&fig_dir).map_err(|e| CliError::io(&fig_dir, e))?;
    let mut written = Vec::new();

    let path = artifact_dir.join(GDV_CSV);
    if let Some(t) = read_optional(&path)? {
        gdv_lines(&t, &path, &fig_dir.join("gdv_layers.svg"), &mut written)?;
    }
    let path = artifact_dir.join(PROJECTION_GDV_CSV);
    if let Some(t) = read_optional(&path)? {
        projected_gdv_lines(&t, &path, &fig_dir.join("gdv_projected.svg"), &mut written)?;
    }
    projection_scatters(&artifact_dir.join(PROJECTIONS_DIR), &fig_dir, &mut written)?;
    let path = artifact_dir.join(CONCEPT_CORRELATIONS_CSV);
    if let Some(t) = read_optional(&path)? {
        concept_curve(&t, &path, &fig_dir, &mut written)?;
    }
    let path = artifact_dir.join(CONCEPT_PROJECTIONS_CSV);
    if let Some(t) = read_optional(&path)? {
        concept_scatters(&t, &path, &fig_dir, &mut written)?;
    }
    for (csv, svg, title) in [
        (RSA_GRID_CSV, "rsa_grid.svg", "RSA between representation spaces"),
        (PROJECTION_CORRELATIONS_CSV, "projection_correlations.svg", "Correlation of concept projections"),
    ] {
        let path = artifact_dir.join(csv);
        if let Some(t) = read_optional(&path)? {
            square_heatmap(&t, &path, &fig_dir.join(svg), title, &mut written)?;
        }
    }
    Ok(written)
}

/// A line per series over an ordered list of layers, with the vision/language
/// boundary as a dashed vertical.
struct LayerPlot<'a> {
    title: &'a str,
    ylabel: &'a str,
    layers: &'a [String],
    series: Vec<(String, Vec<Option<f64>>)>,
}

fn draw_layer_plot(svg: &mut Svg, plot: &LayerPlot<'_>, x0: f64, y0: f64, w: f64, h: f64, fixed_y: Option<(f64, f64)>) {
    let n = plot.layers.len().max(1);
    let yr = fixed_y.unwrap_or_else(|| padded_range(plot.series.iter().flat_map(|(_, v)| v.iter().flatten().copied())));
    let axes = Axes { x0, y0, w, h, xr: (-0.5, n as f64 - 0.5), yr };
    svg.rect(x0, y0, w, h, "none", Some("#444444"));
    svg.text((x0 + w / 2.0, y0 - 8.0), 13.0, "middle", plot.title);
    svg.vertical_text((x0 - 52.0, y0 + h / 2.0), 11.0, plot.ylabel);
    for t in [0.0, 0.5, 1.0] {
        let y = yr.0 + t * (yr.1 - yr.0);
        let py = axes.py(y);
        svg.line((x0 - 4.0, py), (x0, py), "#444444", 1.0, None);
        svg.text((x0 - 6.0, py + 3.0), 9.0, "end", &tick_label(y));
    }
    if yr.0 < 0.0 && yr.1 > 0.0 {
        svg.line((x0, axes.py(0.0)), (x0 + w, axes.py(0.0)), "#bbbbbb", 0.8, None);
    }
    let stride = n.div_ceil(12);
    for (i, id) in plot.layers.iter().enumerate() {
        if i % stride == 0 || i + 1 == n {
            let px = axes.px(i as f64);
            svg.line((px, y0 + h), (px, y0 + h + 4.0), "#444444", 1.0, None);
            svg.text((px, y0 + h + 16.0), 8.0, "middle", id);
        }
    }
    if let Some(b) = component_boundary(plot.layers) {
        let px = axes.px(b as f64 - 0.5);
        svg.line((px, y0), (px, y0 + h), "#555555", 1.2, Some("5,4"));
        svg.text((px - 4.0, y0 + 12.0), 9.0, "end", "vision");
        svg.text((px + 4.0, y0 + 12.0), 9.0, "start", "language");
    }
    for (k, (name, values)) in plot.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        // Break the line at missing values.
        let mut segment = Vec::new();
        for (i, v) in values.iter().enumerate() {
            match v {
                Some(v) if v.is_finite() => {
                    let p = axes.map((i as f64, *v));
                    svg.circle(p, 2.5, color);
                    segment.push(p);
                }
                _ => {
                    svg.polyline(&segment, color, 1.5);
                    segment.clear();
                }
            }
        }
        svg.polyline(&segment, color, 1.5);
        let ly = y0 + 14.0 + 14.0 * k as f64;
        svg.line((x0 + w + 10.0, ly - 4.0), (x0 + w + 26.0, ly - 4.0), color, 2.0, None);
        svg.text((x0 + w + 30.0, ly), 10.0, "start", name);
    }
}

/// Series keyed by `series_col`, valued by `value_col`, over the layers in `layer_col`.
fn collect_series(t: &Table, path: &Path, layer_col: &str, series_col: &str, value_col: &str) -> Result<(Vec<String>, Vec<(String, Vec<Option<f64>>)>)> {
    let layers_raw = t.column(layer_col, path)?;
    let keys = t.column(series_col, path)?;
    let values = t.float_column(value_col, path)?;
    let layers = distinct(layers_raw.iter().copied());
    let names = distinct(keys.iter().copied());
    let mut series: Vec<(String, Vec<Option<f64>>)> = names.iter().map(|n| (n.clone(), vec![None; layers.len()])).collect();
    for ((l, k), v) in layers_raw.iter().zip(&keys).zip(&values) {
        let li = layers.iter().position(|x| x == l).expect("layer listed");
        let si = names.iter().position(|x| x == k).expect("series listed");
        series[si].1[li] = Some(*v);
    }
    Ok((layers, series))
}

fn gdv_lines(t: &Table, path: &Path, out: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let (layers, series) = collect_series(t, path, "layer_id", "strategy", "gdv")?;
    let mut svg = Svg::new(760.0, 380.0);
    let plot = LayerPlot { title: "Layerwise GDV", ylabel: "GDV (lower = better separated)", layers: &layers, series };
    draw_layer_plot(&mut svg, &plot, 80.0, 40.0, 530.0, 280.0, None);
    write_svg(out, svg, written)
}

fn projected_gdv_lines(t: &Table, path: &Path, out: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let methods = distinct(t.column("method", path)?);
    let method_col = t.column("method", path)?;
    let panel_h = 240.0;
    let mut svg = Svg::new(760.0, 60.0 + methods.len() as f64 * (panel_h + 70.0));
    for (k, method) in methods.iter().enumerate() {
        let rows: Vec<Vec<String>> = t.rows.iter().zip(&method_col).filter(|(_, m)| *m == method).map(|(r, _)| r.clone()).collect();
        let sub = Table { header: t.header.clone(), rows };
        let (layers, series) = collect_series(&sub, path, "layer_id", "strategy", "gdv_projected")?;
        let title = format!("GDV after {method} projection");
        let plot = LayerPlot { title: &title, ylabel: "GDV (D = 2)", layers: &layers, series };
        draw_layer_plot(&mut svg, &plot, 80.0, 40.0 + k as f64 * (panel_h + 70.0), 530.0, panel_h, None);
    }
    write_svg(out, svg, written)
}

fn projection_scatters(dir: &Path, fig_dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let mut files: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect(),
        Err(_) => Vec::new(),
    };
    files.sort();
    if files.is_empty() {
        warn!("no projection CSVs under {}; skipping scatter figures", dir.display());
        return Ok(());
    }
    for path in files {
        let t = Table::read(&path)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("projection").to_string();
        let x = t.float_column("x", &path)?;
        let y = t.float_column("y", &path)?;
        let ci = t.float_column("ci", &path)?;
        let xr = padded_range(x.iter().copied());
        let yr = padded_range(y.iter().copied());
        let mut svg = Svg::new(1160.0, 330.0);
        let panel = 230.0;
        let mut panels: Vec<(String, Vec<String>)> = Vec::new();
        let (lo, hi) = padded_range(ci.iter().copied());
        panels.push(("CI (continuous)".into(), ci.iter().map(|c| sequential((c - lo) / (hi - lo))).collect()));
        for strategy in LABEL_STRATEGIES {
            let name = strategy.as_str();
            if t.column_index(name).is_none() {
                continue;
            }
            let labels = t.float_column(name, &path)?;
            let k = labels.iter().fold(0.0f64, |a, b| a.max(*b)) + 1.0;
            let colors = labels.iter().map(|l| sequential(if k > 1.0 { l / (k - 1.0) } else { 0.0 })).collect();
            panels.push((name.to_string(), colors));
        }
        for (p, (title, colors)) in panels.iter().enumerate() {
            let axes = Axes { x0: 50.0 + p as f64 * (panel + 55.0), y0: 50.0, w: panel, h: panel, xr, yr };
            axes.draw_frame(&mut svg, title, "dim 1", "dim 2");
            for ((xi, yi), c) in x.iter().zip(&y).zip(colors) {
                svg.circle(axes.map((*xi, *yi)), 2.2, c);
            }
        }
        svg.text((580.0, 18.0), 14.0, "middle", &stem);
        write_svg(&fig_dir.join(format!("projection_{}.svg", slug(&stem))), svg, written)?;
    }
    Ok(())
}

fn concept_curve(t: &Table, path: &Path, fig_dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let (layers, series) = collect_series(t, path, "layer", "method", "r_test")?;
    let mut svg = Svg::new(760.0, 380.0);
    let plot = LayerPlot {
        title: "Concept projection vs CI (held-out Pearson r)",
        ylabel: "Pearson r",
        layers: &layers,
        series: series.clone(),
    };
    draw_layer_plot(&mut svg, &plot, 80.0, 40.0, 530.0, 280.0, Some((-1.05, 1.05)));
    write_svg(&fig_dir.join("concept_correlations.svg"), svg, written)?;

    // Layer x method heatmap of the same values.
    let methods: Vec<String> = series.iter().map(|(n, _)| n.clone()).collect();
    let values: Vec<Vec<f64>> = (0..layers.len())
        .map(|l| series.iter().map(|(_, v)| v[l].unwrap_or(f64::NAN)).collect())
        .collect();
    let svg = heatmap("Concept correlation by layer and method", &layers, &methods, &values);
    write_svg(&fig_dir.join("concept_heatmap.svg"), svg, written)
}

fn concept_scatters(t: &Table, path: &Path, fig_dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let layer_col = t.column("layer", path)?;
    let method_col = t.column("method", path)?;
    let ci = t.float_column("ci", path)?;
    let proj = t.float_column("projection", path)?;
    let layers = distinct(layer_col.iter().copied());
    let methods = distinct(method_col.iter().copied());
    let mut groups: BTreeMap<(usize, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for i in 0..t.rows.len() {
        let l = layers.iter().position(|x| x == layer_col[i]).expect("layer listed");
        let m = methods.iter().position(|x| x == method_col[i]).expect("method listed");
        let g = groups.entry((l, m)).or_default();
        g.0.push(proj[i]);
        g.1.push(ci[i]);
    }
    let cols = 3usize;
    let panel = 200.0;
    for (l, layer) in layers.iter().enumerate() {
        let rows = methods.len().div_ceil(cols);
        let mut svg = Svg::new(60.0 + cols as f64 * (panel + 70.0), 60.0 + rows as f64 * (panel + 70.0));
        svg.text((svg_center(cols, panel), 20.0), 14.0, "middle", &format!("Concept projections vs CI, {layer}"));
        for (m, method) in methods.iter().enumerate() {
            let Some((x, y)) = groups.get(&(l, m)) else { continue };
            let axes = Axes {
                x0: 70.0 + (m % cols) as f64 * (panel + 70.0),
                y0: 50.0 + (m / cols) as f64 * (panel + 70.0),
                w: panel,
                h: panel,
                xr: padded_range(x.iter().copied()),
                yr: padded_range(y.iter().copied()),
            };
            axes.draw_frame(&mut svg, method, "projection", "CI");
            for (xi, yi) in x.iter().zip(y) {
                svg.circle(axes.map((*xi, *yi)), 2.0, "#1f77b4");
            }
            if let Some((p, q)) = least_squares(x, y).and_then(|(a, b)| axes.clip_line(a, b)) {
                svg.line(p, q, "#d62728", 1.5, None);
            }
            let r = pearson(x, y).map(|c| c.r).unwrap_or(f64::NAN);
            svg.text((axes.x0 + 6.0, axes.y0 + 14.0), 10.0, "start", &format!("r = {r:.3}"));
        }
        write_svg(&fig_dir.join(format!("concept_scatter_{}.svg", slug(layer))), svg, written)?;
    }
    Ok(())
}

fn svg_center(cols: usize, panel: f64) -> f64 {
    (60.0 + cols as f64 * (panel + 70.0)) / 2.0
}

/// Intercept and slope of the least-squares line, if `x` varies.
fn least_squares(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    Some((my - b * mx, b))
}

fn square_heatmap(t: &Table, path: &Path, out: &Path, title: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let tags = t.column("space", path)?.into_iter().map(str::to_string).collect::<Vec<_>>();
    let cols: Vec<String> = t.header.iter().skip(1).cloned().collect();
    if cols != tags {
        return Err(CliError::validation(format!("{}: row and column labels differ", path.display())));
    }
    let values = cols.iter().map(|c| t.float_column(c, path)).collect::<Result<Vec<_>>>()?;
    // `values` is column-major; transpose to rows.
    let rows: Vec<Vec<f64>> = (0..tags.len()).map(|i| values.iter().map(|col| col[i]).collect()).collect();
    write_svg(out, heatmap(title, &tags, &cols, &rows), written)
}

/// Heatmap with values in `[-1, 1]`; cells are annotated when the grid is small.
fn heatmap(title: &str, row_labels: &[String], col_labels: &[String], values: &[Vec<f64>]) -> Svg {
    let cell = if row_labels.len().max(col_labels.len()) > 20 { 12.0 } else { 44.0 };
    let (x0, y0) = (110.0, 110.0);
    let w = x0 + cell * col_labels.len() as f64 + 90.0;
    let h = y0 + cell * row_labels.len() as f64 + 30.0;
    let mut svg = Svg::new(w.max(360.0), h);
    svg.text((w.max(360.0) / 2.0, 22.0), 14.0, "middle", title);
    for (j, c) in col_labels.iter().enumerate() {
        let x = x0 + cell * (j as f64 + 0.5);
        svg.vertical_text((x, y0 - 40.0), 9.0, c);
    }
    for (i, r) in row_labels.iter().enumerate() {
        let y = y0 + cell * i as f64;
        svg.text((x0 - 6.0, y + cell / 2.0 + 3.0), 9.0, "end", r);
        for (j, v) in values[i].iter().enumerate() {
            let x = x0 + cell * j as f64;
            let fill = if v.is_finite() { diverging(*v) } else { "#cccccc".to_string() };
            svg.rect(x, y, cell, cell, &fill, Some("#ffffff"));
            if cell > 20.0 && v.is_finite() {
                svg.text((x + cell / 2.0, y + cell / 2.0 + 3.0), 9.0, "middle", &format!("{v:.2}"));
            }
        }
    }
    let lx = x0 + cell * col_labels.len() as f64 + 20.0;
    for k in 0..=20 {
        let v = 1.0 - k as f64 / 10.0;
        svg.rect(lx, y0 + k as f64 * 6.0, 14.0, 6.0, &diverging(v), None);
    }
    svg.text((lx + 18.0, y0 + 5.0), 9.0, "start", "1");
    svg.text((lx + 18.0, y0 + 63.0), 9.0, "start", "0");
    svg.text((lx + 18.0, y0 + 126.0), 9.0, "start", "-1");
    svg
}

//! SER comparison tables.

use crate::config::ReportLayout;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub dev_ser: Option<f64>,
    pub eval_ser: Option<f64>,
}

fn first_column(layout: ReportLayout) -> &'static str {
    match layout {
        ReportLayout::Augmentation => "Augmentation",
        ReportLayout::Systems => "System",
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

pub fn render_markdown(layout: ReportLayout, title: Option<&str>, rows: &[ReportRow]) -> String {
    let mut out = String::new();
    if let Some(t) = title {
        out.push_str(&format!("## {t}\n\n"));
    }
    out.push_str(&format!("| {} | Dev SER (%) | Eval SER (%) |\n", first_column(layout)));
    out.push_str("|---|---:|---:|\n");
    for r in rows {
        out.push_str(&format!("| {} | {} | {} |\n", r.name, cell(r.dev_ser), cell(r.eval_ser)));
    }
    out
}

pub fn render_csv(layout: ReportLayout, rows: &[ReportRow]) -> String {
    let mut out = format!("{},dev_ser_percent,eval_ser_percent\n", first_column(layout).to_lowercase());
    for r in rows {
        let quoted = if r.name.contains([',', '"']) { format!("\"{}\"", r.name.replace('"', "\"\"")) } else { r.name.clone() };
        let num = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
        out.push_str(&format!("{quoted},{},{}\n", num(r.dev_ser), num(r.eval_ser)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_arm_table() {
        let rows = vec![
            ReportRow { name: "none".into(), dev_ser: Some(20.19), eval_ser: Some(21.0) },
            ReportRow { name: "meeting".into(), dev_ser: Some(15.0), eval_ser: None },
            ReportRow { name: "meeting+diac".into(), dev_ser: Some(13.57), eval_ser: Some(14.0) },
        ];
        let md = render_markdown(ReportLayout::Augmentation, None, &rows);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "| Augmentation | Dev SER (%) | Eval SER (%) |");
        assert_eq!(lines[3], "| meeting | 15.00 | - |");
        let csv = render_csv(ReportLayout::Systems, &rows[..1]);
        assert_eq!(csv, "system,dev_ser_percent,eval_ser_percent\nnone,20.1900,21.0000\n");
    }
}

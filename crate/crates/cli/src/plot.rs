//! Gnuplot data files and companion scripts. Nothing is rendered here.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, CliResult};
use crate::report::{DiagnosticsRow, TableRow};

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn cell(s: &str) -> &str {
    if s.is_empty() || s == "failed" {
        "NaN"
    } else {
        s
    }
}

/// Final tangent-fit residual against time, one file pair per solve.
pub fn write_residuals(dir: &Path, rows: &[DiagnosticsRow]) -> CliResult<()> {
    let mut data = String::from("# t residual\n");
    for r in rows {
        let _ = writeln!(data, "{} {:e}", r.time, r.residual);
    }
    write(&dir.join("residuals.dat"), &data)?;
    let script = "set xlabel 't'\n\
                  set ylabel 'relative residual'\n\
                  set logscale y\n\
                  plot 'residuals.dat' using 1:2 with lines title 'last tangent fit'\n";
    write(&dir.join("residuals.gp"), script)
}

/// Mean cost against polynomial degree for each method.
pub fn write_cost_vs_degree(dir: &Path, rows: &[TableRow]) -> CliResult<()> {
    let mut data = String::from("# degree bellman dlra hybrid optimal\n");
    for r in rows {
        let _ = writeln!(
            data,
            "{} {} {} {} {}",
            r.degree,
            cell(&r.bellman_cost),
            cell(&r.dlra_cost),
            cell(&r.hybrid_cost),
            cell(&r.optimal_cost)
        );
    }
    write(&dir.join("cost_vs_degree.dat"), &data)?;
    let script = "set xlabel 'polynomial degree'\n\
                  set ylabel 'mean cost'\n\
                  set datafile missing 'NaN'\n\
                  plot for [c=2:5] 'cost_vs_degree.dat' using 1:c with linespoints title columnheader(c)\n";
    write(&dir.join("cost_vs_degree.gp"), script)
}

/// Control traces `<prefix>_<method>.csv` for the listed methods.
pub fn write_trace_script(dir: &Path, prefix: &str, methods: &[String]) -> CliResult<()> {
    let mut script = String::from("set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\nset ylabel 'u'\nplot ");
    let parts: Vec<String> = methods
        .iter()
        .map(|m| format!("'{prefix}_{m}.csv' using 1:(column('u')) with lines title '{m}'"))
        .collect();
    script.push_str(&parts.join(", \\\n     "));
    script.push('\n');
    write(&dir.join(format!("{prefix}.gp")), &script)
}

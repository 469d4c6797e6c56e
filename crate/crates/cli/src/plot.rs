//! Gnuplot scripts for the CSV tables. Each script renders a PNG next to
//! its data file.

pub fn sweep(csv: &str) -> String {
    format!(
        r#"set datafile separator ","
set key autotitle columnhead
set terminal pngcairo size 1200,500
set output "sweep.png"
set multiplot layout 1,2
set xlabel "alpha"
set ylabel "gamma"
plot "{csv}" using 1:5 with linespoints
set ylabel "e'"
plot "{csv}" using 1:8 with linespoints title "e' (finite differences)", \
     "{csv}" using 1:(0) with lines dashtype 2 title "0"
unset multiplot
"#
    )
}

pub fn scaling(csv: &str) -> String {
    format!(
        r#"set datafile separator ","
set terminal pngcairo size 700,500
set output "scaling.png"
set logscale xy
set xlabel "eps"
set ylabel "gamma"
f(x) = a * x**b
fit f(x) "{csv}" using 1:3 via a, b
plot "{csv}" using 1:3 with points title "gamma", f(x) title sprintf("fit, slope %.3f", b)
"#
    )
}

/// Orbital distance against time for each series file.
pub fn distances(png: &str, series: &[(String, String)]) -> String {
    let mut s = format!(
        "set datafile separator \",\"\nset terminal pngcairo size 900,500\nset output \"{png}\"\n\
         set logscale y\nset xlabel \"t\"\nset ylabel \"orbital distance\"\nplot "
    );
    let curves: Vec<String> = series
        .iter()
        .map(|(file, title)| format!("\"{file}\" using 1:5 with lines title \"{title}\""))
        .collect();
    s.push_str(&curves.join(", \\\n     "));
    s.push('\n');
    s
}

#![no_main]
use difflab::plot::{render, PlotKind, PlotOptions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&selector, csv)) = data.split_first() else {
        return;
    };
    let kind = match selector % 3 {
        0 => PlotKind::Lines,
        1 => PlotKind::Scatter,
        _ => PlotKind::VectorField,
    };
    if let Ok(rendered) = render(csv, kind, &PlotOptions::default()) {
        assert!(rendered.svg.starts_with("<svg") && rendered.svg.ends_with("</svg>\n"));
        assert!(!rendered.svg.contains("NaN"));
    }
});

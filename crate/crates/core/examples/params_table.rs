//! Parameter and MAC counts for ResNet-50 and every search scope.
//!
//! cargo run --release --example params_table -- [classes]

use scoped_dnas::searchspace::{build_base_resnet50, build_supernet, count_macs, count_params, format_millions, CountMode, Scope};

fn main() -> scoped_dnas::Result<()> {
    let classes: usize = std::env::args().nth(1).map_or(10, |s| s.parse().expect("classes"));
    let base = build_base_resnet50(classes, false)?;
    let baseline = count_params(&base, CountMode::SinglePathMax);
    println!("resnet50, {classes} classes: {baseline} params ({})", format_millions(baseline));
    println!("{:<6} {:>7} {:>16} {:>16} {:>12} {:>10}", "scope", "blocks", "single_path_max", "all_paths", "space", "GMACs@224");
    for scope in Scope::SEARCHABLE {
        let s = build_supernet(&base, scope)?;
        println!(
            "{:<6} {:>7} {:>16} {:>16} {:>12} {:>10.3}",
            scope.to_string(),
            s.search_block_indices().len(),
            format_millions(count_params(&s, CountMode::SinglePathMax)),
            format_millions(count_params(&s, CountMode::AllPaths)),
            format!("6^{}", s.search_block_indices().len()),
            count_macs(&s, 224)? as f64 / 1e9,
        );
    }
    Ok(())
}

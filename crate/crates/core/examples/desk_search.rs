//! Desk-scale search followed by retraining of the exported architecture.
//! Writes trajectory.csv, one SVG per block and final_architecture.json.
//!
//! cargo run --release --example desk_search -- [out_dir] [scope]

use std::path::PathBuf;
use std::sync::Arc;

use scoped_dnas::cli::{emit_plot_svg, Preset, RunConfig};
use scoped_dnas::data::{split_train_val, synthetic_dataset};
use scoped_dnas::engine::{init_network, retrain, run_search, SearchData, Trajectory, TrajectoryRow};
use scoped_dnas::searchspace::{build_supernet, Scope};

fn rows_of(t: &Trajectory, block: usize) -> Vec<TrajectoryRow> {
    t.rows().iter().filter(|r| r.block_id == block).cloned().collect()
}

fn main() -> scoped_dnas::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "desk_run".into()));
    let mut config = RunConfig::preset(Preset::Desk);
    if let Some(s) = args.next() {
        config.search.scope = s.parse::<Scope>()?;
    }
    std::fs::create_dir_all(&out).map_err(|e| scoped_dnas::Error::io(&out, e))?;

    let supernet = build_supernet(&config.base_architecture()?, config.search.scope)?;
    let data = Arc::new(synthetic_dataset(&config.synthetic_spec())?);
    let (train, val) = split_train_val(data.clone(), config.train_fraction, config.search.seed, config.search.batch_size)?;
    let mut search_data = SearchData { train, val, augment: config.augment.clone() };
    let mut net = init_network::<f32>(&supernet, config.search.seed)?;
    let outcome = run_search(&mut net, &config.search, &mut search_data)?;
    for m in &outcome.metrics {
        println!("search epoch {} loss {:.4} val {:.4} min top p {:.3}", m.epoch, m.train_loss, m.val_loss, m.min_top_probability);
    }

    let save = |name: String, body: String| {
        let p = out.join(name);
        std::fs::write(&p, body).map_err(|e| scoped_dnas::Error::io(&p, e))
    };
    save("trajectory.csv".into(), outcome.trajectory.to_csv())?;
    save("final_architecture.json".into(), outcome.final_architecture.to_json())?;
    for block in outcome.trajectory.block_ids() {
        save(format!("trajectory_block_{block}.svg"), emit_plot_svg(&rows_of(&outcome.trajectory, block))?)?;
    }
    let chosen: Vec<String> = outcome.final_architecture.choices.iter().map(|c| c.label()).collect();
    println!("chosen: {}", chosen.join(" "));

    let (mut train, val) = split_train_val(data.clone(), config.train_fraction, config.search.seed, config.search.batch_size)?;
    let eval = data.select(val.indices());
    let (_, history) = retrain::<f32>(&outcome.final_architecture, &config.search, &mut train, &eval, config.augment.as_ref())?;
    for m in history {
        println!("retrain epoch {} loss {:.4} eval acc {:.3}", m.epoch, m.train_loss, m.eval_accuracy);
    }
    println!("wrote {}", out.display());
    Ok(())
}

//! Search on a separable synthetic task where one candidate per search block
//! is wired to output zeros; its probability should sink below uniform.
//!
//! cargo run --release --example planted_winner -- [seed] [epochs]

use std::sync::Arc;
use std::time::Instant;

use scoped_dnas::data::{split_train_val, synthetic_dataset, SyntheticSpec};
use scoped_dnas::engine::{init_network, run_search, SearchConfig, SearchData, StopConfig};
use scoped_dnas::searchspace::{build_supernet, ResNetShape, Scope, StemKind};

const SABOTAGED: usize = 4;

fn main() -> scoped_dnas::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let epochs: usize = args.next().map_or(30, |s| s.parse().expect("epochs"));

    let base = ResNetShape {
        num_classes: 3,
        in_channels: 3,
        stem: StemKind::SmallInput,
        stem_channels: 8,
        stage_blocks: vec![2],
        stage_mids: vec![4],
    }
    .build()?;
    let supernet = build_supernet(&base, Scope::Small)?;
    let data = Arc::new(synthetic_dataset(&SyntheticSpec {
        classes: 3,
        size: 288,
        image_hw: 8,
        noise: 0.1,
        seed,
    })?);
    let config = SearchConfig {
        epochs,
        batch_size: 16,
        stop: StopConfig { patience: epochs + 1, threshold: 0.9 },
        seed,
        ..SearchConfig::default()
    };
    let (train, val) = split_train_val(data, 2.0 / 3.0, seed, config.batch_size)?;
    let mut data = SearchData { train, val, augment: None };
    let mut net = init_network::<f32>(&supernet, seed)?;
    for block in supernet.search_block_indices() {
        net.zero_out_candidate(block, SABOTAGED)?;
    }
    let t = Instant::now();
    let out = run_search(&mut net, &config, &mut data)?;
    for m in &out.metrics {
        println!("epoch {:>3} train loss {:.4} acc {:.3} val loss {:.4}", m.epoch, m.train_loss, m.train_accuracy, m.val_loss);
    }
    for (block, p) in out.arch.block_ids.iter().zip(out.arch.probabilities()?) {
        let shown: Vec<String> = p.iter().map(|v| format!("{v:.3}")).collect();
        println!("block {block}: [{}]  sabotaged {:.4}", shown.join(", "), p[SABOTAGED]);
    }
    println!("chosen: {:?}  ({:.1}s)", out.final_architecture.choices, t.elapsed().as_secs_f64());
    Ok(())
}

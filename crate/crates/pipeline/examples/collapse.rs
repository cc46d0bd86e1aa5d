//! Classification-only versus joint fine-tuning of one LM-pretrained desk
//! model, printing the per-epoch dev curves of both runs.
//!
//! Settings come from `dualhead::desk::DeskSetup`; any field can be
//! overridden through an environment variable of the same name in upper
//! case, e.g. `SEED=3 EPOCHS=10 cargo run --release --example collapse`.

use std::time::Instant;

use dualhead::desk::{DeskSetup, Pretrained};

fn main() -> anyhow::Result<()> {
    let setup = DeskSetup::from_env()?;
    println!("{setup:?}");
    let t = Instant::now();
    let pre = Pretrained::build(&setup)?;
    println!("pretrained in {:.1}s", t.elapsed().as_secs_f64());
    for joint in [false, true] {
        let t = Instant::now();
        let run = pre.finetune(&setup, joint)?;
        println!(
            "{} fine-tuning in {:.1}s",
            if joint { "joint" } else { "cls-only" },
            t.elapsed().as_secs_f64()
        );
        let c = &run.curves;
        for i in 0..c.epochs.len() {
            println!(
                "  epoch {:>2} parsability {:.3} auroc {} kappa {}",
                c.epochs[i],
                c.parsability[i],
                c.auroc[i].map_or("n/a".into(), |v| format!("{v:.3}")),
                c.kappa[i].map_or("n/a".into(), |v| format!("{v:.3}")),
            );
        }
        println!("  kappa trend {:?} auroc trend {:?}", c.kappa_trend, c.auroc_trend);
        if let Some(r) = &run.test_report {
            print!("{}", r.render_table());
        }
    }
    Ok(())
}

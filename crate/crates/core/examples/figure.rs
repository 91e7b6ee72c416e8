//! Runs the bundled scenario set for one figure tag (default fig2) into a
//! directory, exactly as `lzsm figure <tag>` does.
//!
//!     cargo run --release --example figure -- fig4 /tmp/fig4

use lzsm_core::scenario::{run_figure, RunOptions};

fn main() {
    let mut args = std::env::args().skip(1);
    let tag = args.next().unwrap_or_else(|| "fig2".into());
    let out = args.next().unwrap_or_else(|| format!("out/{tag}"));
    let opts = RunOptions {
        out_dir: out.into(),
        ..Default::default()
    };
    match run_figure(&tag, &opts) {
        Ok(rep) => {
            for f in rep.files {
                println!("{}", f.display());
            }
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}

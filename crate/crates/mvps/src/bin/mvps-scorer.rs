//! Scorer process for the external protocol.
//!
//! `mvps-scorer surrogate --manifest FILE...` answers with the surrogate's
//! predictions. A real model would look at the images; the surrogate instead
//! looks up each id's domain and ground-truth mask in the given datasets.
//! `mvps-scorer echo` returns the first prompt's mask for every query.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use mvps::embfile::load_manifest;
use mvps::external::{decode_mask, encode_mask, Reply, Request};
use mvps_core::datamodel::Item;
use mvps_core::environment::{surrogate_predict, SurrogateParams};
use mvps_core::mask::Mask;

#[derive(Parser)]
#[command(name = "mvps-scorer", version, about = "Out-of-process scorer speaking the mvps JSON-lines protocol")]
struct Cli {
    #[command(subcommand)]
    mode: Mode,
}

#[derive(Subcommand)]
enum Mode {
    Surrogate {
        /// Dataset manifests resolving image ids.
        #[arg(long, required = true)]
        manifest: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.7)]
        w_sim: f64,
        #[arg(long, default_value_t = 0.3)]
        w_dom: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    Echo,
}

struct Known {
    domain_id: u16,
    mask: Mask,
}

fn serve(mut answer: impl FnMut(&Request) -> Result<Vec<Mask>>) -> Result<()> {
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line.context("reading request")?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Request = serde_json::from_str(&line).context("parsing request")?;
        let masks = answer(&req)?;
        let reply = Reply { masks_b64: masks.iter().map(encode_mask).collect() };
        serde_json::to_writer(&mut stdout, &reply)?;
        stdout.write_all(b"\n")?;
        stdout.flush()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.mode {
        Mode::Echo => serve(|req| {
            let first = req.prompts.first().ok_or_else(|| anyhow!("no prompts"))?;
            let m = decode_mask(req.h, req.w, &first.mask_b64).map_err(|e| anyhow!(e))?;
            Ok(vec![m; req.queries.len()])
        }),
        Mode::Surrogate { manifest, w_sim, w_dom, seed } => {
            let params = SurrogateParams { w_sim, w_dom, seed };
            params.validate()?;
            let mut known = HashMap::new();
            for path in &manifest {
                let ds = load_manifest(path).with_context(|| format!("loading {}", path.display()))?;
                for r in ds.records() {
                    known.insert(r.image_id, Known { domain_id: r.domain_id, mask: ds.mask(r.mask_id).clone() });
                }
            }
            let lookup = |id: u64| known.get(&id).ok_or_else(|| anyhow!("unknown image id {id}"));
            serve(|req| {
                let prompts = req
                    .prompts
                    .iter()
                    .map(|p| {
                        Ok(Item {
                            image_id: p.id,
                            embedding: p.embedding.clone(),
                            class_label: 0,
                            domain_id: lookup(p.id)?.domain_id,
                            mask: decode_mask(req.h, req.w, &p.mask_b64).map_err(|e| anyhow!(e))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&Item> = prompts.iter().collect();
                req.queries
                    .iter()
                    .map(|q| {
                        let k = lookup(q.id)?;
                        if (k.mask.h(), k.mask.w()) != (req.h, req.w) {
                            bail!(
                                "query {} has a {}x{} mask, request says {}x{}",
                                q.id,
                                k.mask.h(),
                                k.mask.w(),
                                req.h,
                                req.w
                            );
                        }
                        let item = Item {
                            image_id: q.id,
                            embedding: q.embedding.clone(),
                            class_label: 0,
                            domain_id: k.domain_id,
                            mask: k.mask.clone(),
                        };
                        Ok(surrogate_predict(&refs, &item, &params)?)
                    })
                    .collect()
            })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mvps-scorer: {e:#}");
            ExitCode::FAILURE
        }
    }
}

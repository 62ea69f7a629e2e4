use std::fmt::Write as _;
use std::path::Path;

use bsarec::data::pad_truncate;
use bsarec::diagnostics::{
    attention_iterates, beta_report, lowpass_decay, model_attention_response, model_layer_profile,
    oversmoothing_profile, random_softmax_attention, spectral_response,
};
use bsarec::evaluation::{queries, Stage};
use bsarec::model::load_checkpoint;
use bsarec::spectral::FrequencySplit;
use bsarec::{BsaRec, Error, ModelConfig, Result};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use crate::output::{load_splits, write_json, write_text};
use crate::DiagnoseArgs;

const SYNTHETIC_ITEMS: usize = 100;

/// `a..b`, `a..=b` (both inclusive) or a single layer `a`.
pub fn parse_layers(s: &str) -> std::result::Result<(usize, usize), String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("`{t}` is not a layer number"));
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.trim_start_matches('='))?),
        None => {
            let a = num(s)?;
            (a, a)
        }
    };
    if a == 0 || b < a {
        return Err(format!("layer range `{s}` must satisfy 1 <= start <= end"));
    }
    Ok((a, b))
}

/// Powers of two up to `t_max`, starting at 1.
fn doubling(t_max: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |t| t.checked_mul(2))
        .take_while(|&t| t <= t_max)
        .collect()
}

fn fmt_ratio(r: Option<f64>) -> String {
    r.map(|v| format!("{v:e}")).unwrap_or_default()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Element-wise mean of vectors that may differ in length.
fn ragged_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let len = rows.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r.get(i).copied()).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect()
}

fn run_synthetic(args: &DiagnoseArgs, out: &Path) -> Result<()> {
    let split = FrequencySplit::new(args.n, args.cutoff)?;
    if args.instances == 0 || args.tmax == 0 {
        return Err(Error::InvalidArgument("--instances and --tmax must be >= 1".into()));
    }
    let ts = doubling(args.tmax);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut decay = String::from("instance,t,ratio\n");
    let mut responses = Vec::new();
    let mut cosines = vec![Vec::new(); ts.len()];
    let mut spectra = vec![Vec::new(); ts.len()];
    let mut decayed = 0;
    let mut undefined = 0;
    for inst in 0..args.instances {
        let a = random_softmax_attention(args.n, args.hidden, &mut rng);
        let x = Array1::from_shape_simple_fn(args.n, || rng.sample(StandardNormal));
        let ratios = lowpass_decay(a.view(), x.view(), split, args.tmax)?;
        for (i, r) in ratios.iter().enumerate() {
            let _ = writeln!(decay, "{inst},{},{}", i + 1, fmt_ratio(*r));
        }
        match (ratios[0], ratios[args.tmax - 1]) {
            (Some(first), Some(last)) if last < 1e-3 && last < first => decayed += 1,
            (Some(_), Some(_)) => {}
            _ => undefined += 1,
        }
        responses.push(spectral_response(a.view())?);

        let signals = random_matrix(&mut rng, args.n, args.hidden);
        let iterates = attention_iterates(a.view(), signals.view(), &ts);
        let inputs: Vec<(usize, _)> = ts.iter().copied().zip(iterates.iter().map(|m| m.view())).collect();
        for (i, e) in oversmoothing_profile(&inputs, None).entries.into_iter().enumerate() {
            cosines[i].push(e.cosine);
            spectra[i].push(e.singular_values);
        }
    }
    write_text(&out.join("decay.csv"), &decay)?;
    write_response(&out.join("spectral_response.csv"), &[ragged_mean(&responses)], false)?;

    let mut cos = String::from("t,cosine\n");
    let mut sv = String::from("t,index,singular_value\n");
    for (i, t) in ts.iter().enumerate() {
        let _ = writeln!(cos, "{t},{}", cosines[i].iter().sum::<f64>() / cosines[i].len() as f64);
        for (j, s) in ragged_mean(&spectra[i]).iter().enumerate() {
            let _ = writeln!(sv, "{t},{j},{s}");
        }
    }
    write_text(&out.join("oversmoothing_cosine.csv"), &cos)?;
    write_text(&out.join("singular_values.csv"), &sv)?;
    let summary = json!({
        "mode": "synthetic",
        "n": args.n,
        "cutoff": args.cutoff,
        "t_max": args.tmax,
        "instances": args.instances,
        "seed": args.seed,
        "decayed_below_1e-3": decayed,
        "undefined_ratio": undefined,
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!("{decayed}/{} instances: HFC/LFC ratio at t={} below 1e-3 and below t=1", args.instances, args.tmax);
    Ok(())
}

fn write_response(path: &Path, per_layer: &[Vec<f64>], with_layer: bool) -> Result<()> {
    let mut text = String::from(if with_layer { "layer,bin,response\n" } else { "bin,response\n" });
    for (l, resp) in per_layer.iter().enumerate() {
        for (k, r) in resp.iter().enumerate() {
            if with_layer {
                let _ = writeln!(text, "{},{k},{r}", l + 1);
            } else {
                let _ = writeln!(text, "{k},{r}");
            }
        }
    }
    write_text(path, &text)
}

/// Cosine and singular spectra per layer, averaged over sequences. Layer 0
/// is the embedding output.
fn write_layer_profile(model: &BsaRec, seqs: &[Vec<usize>], range: (usize, usize), out: &Path) -> Result<()> {
    let layers = model.config().layers;
    let mut cosines = vec![Vec::new(); layers + 1];
    let mut spectra = vec![Vec::new(); layers + 1];
    for seq in seqs {
        for e in model_layer_profile(model, seq)?.entries {
            cosines[e.label].push(e.cosine);
            spectra[e.label].push(e.singular_values);
        }
    }
    let keep = |l: usize| l == 0 || (range.0..=range.1).contains(&l);
    let mut cos = String::from("layer,cosine\n");
    let mut sv = String::from("layer,index,singular_value\n");
    for l in (0..=layers).filter(|&l| keep(l)) {
        if cosines[l].is_empty() {
            continue;
        }
        let _ = writeln!(cos, "{l},{}", cosines[l].iter().sum::<f64>() / cosines[l].len() as f64);
        for (j, s) in ragged_mean(&spectra[l]).iter().enumerate() {
            let _ = writeln!(sv, "{l},{j},{s}");
        }
    }
    write_text(&out.join("layer_cosine.csv"), &cos)?;
    write_text(&out.join("layer_singular_values.csv"), &sv)?;

    let response = model_attention_response(model, seqs)?;
    let selected: Vec<Vec<f64>> = response
        .into_iter()
        .enumerate()
        .map(|(l, r)| if keep(l + 1) { r } else { Vec::new() })
        .collect();
    write_response(&out.join("spectral_response.csv"), &selected, true)
}

fn random_sequences(rng: &mut ChaCha8Rng, count: usize, len: usize, items: usize) -> Vec<Vec<usize>> {
    (0..count)
        .map(|_| (0..len).map(|_| rng.random_range(1..=items)).collect())
        .collect()
}

fn without_inductive_bias(model: BsaRec) -> Result<BsaRec> {
    let mut cfg = model.config().clone();
    cfg.alpha = 0.0;
    BsaRec::new(cfg, model.params)
}

fn run_checkpoint(args: &DiagnoseArgs, path: &Path, out: &Path) -> Result<()> {
    let mut model = load_checkpoint(path)?;
    if args.pure_attention {
        model = without_inductive_bias(model)?;
    }
    let cfg = model.config().clone();
    let range = args.layers.unwrap_or((1, cfg.layers));
    if range.1 > cfg.layers {
        return Err(Error::InvalidArgument(format!(
            "layer range {}..{} exceeds the checkpoint's {} layers",
            range.0, range.1, cfg.layers
        )));
    }
    let seqs: Vec<Vec<usize>> = match &args.data {
        Some(data) => {
            let (_, splits) = load_splits(data, 1)?;
            if splits.num_items != cfg.num_items {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch: item_embedding is [{}, {}] in the checkpoint but the dataset needs [{}, {}]",
                    cfg.num_items + 1,
                    cfg.hidden,
                    splits.num_items + 1,
                    cfg.hidden
                )));
            }
            queries(&splits, Stage::Test)
                .into_iter()
                .take(args.instances.max(1))
                .map(|q| pad_truncate(&q.history, cfg.max_len))
                .collect()
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            random_sequences(&mut rng, args.instances.max(1), cfg.max_len, cfg.num_items)
        }
    };

    let betas = beta_report(&model.params);
    let mut csv = String::from("layer,mode,mean,min,max\n");
    for b in &betas {
        let _ = writeln!(csv, "{},{},{},{},{}", b.layer + 1, b.mode, b.mean, b.min, b.max);
    }
    write_text(&out.join("beta.csv"), &csv)?;
    let values: Vec<Vec<f64>> = model.params.layers.iter().map(|l| l.beta.values.to_vec()).collect();
    write_json(&out.join("beta.json"), &json!({ "summary": betas, "values": values }))?;
    write_layer_profile(&model, &seqs, range, out)?;
    print!("{csv}");
    Ok(())
}

fn run_untrained(args: &DiagnoseArgs, range: (usize, usize), out: &Path) -> Result<()> {
    let cfg = ModelConfig {
        num_items: SYNTHETIC_ITEMS,
        max_len: args.n,
        hidden: args.hidden,
        layers: range.1,
        heads: 1,
        alpha: if args.pure_attention { 0.0 } else { args.alpha },
        cutoff: args.cutoff,
        ..ModelConfig::default()
    };
    let model = BsaRec::init(cfg, args.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let seqs = random_sequences(&mut rng, args.instances.max(1), args.n, SYNTHETIC_ITEMS);
    write_layer_profile(&model, &seqs, range, out)?;
    print!("{}", std::fs::read_to_string(out.join("layer_cosine.csv")).map_err(|e| Error::io(out, e))?);
    Ok(())
}

pub fn run(args: &DiagnoseArgs) -> Result<()> {
    let out = crate::config::resolve_output(&args.out);
    if args.synthetic {
        return run_synthetic(args, &out);
    }
    match (&args.checkpoint, args.layers) {
        (Some(path), _) => run_checkpoint(args, path, &out),
        (None, Some(range)) => run_untrained(args, range, &out),
        (None, None) => Err(Error::InvalidArgument(
            "choose --synthetic, --checkpoint, or --layers".into(),
        )),
    }
}

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use dctshield::ablation::run_ablation;
use dctshield::augment::{self, AugmentManifest, AugmentParams};
use dctshield::codec::{decode, defend, encode, scale_table, CodecConfig, CoefArchive, TableSpec};
use dctshield::design::{optimize, Evaluator, ExternalEvaluator, SignalEvaluator};
use dctshield::ensemble::{vote_join, ModelScores};
use dctshield::io::{list_images, read_dir_images, read_image, sha256_hex, write_image};
use dctshield::perturb::{apply, verify_dct_bound, PerturbSpec, Residual};
use dctshield::stats::{
    band_ratio, estimate_band_stats_with, image_band_stats, merge_rgb_ratio, pair_residual,
    residual_channel_plane, ChannelTag, RatioFile, StatsFile,
};
use dctshield::{Error, ImageBuffer, PerturbKind, QuantTable, Result};

use crate::{CodecArgs, Command};

const ARCHIVE_EXT: &str = "dsh";
const RESIDUAL_EXT: &str = "dsr";

pub fn run(cmd: Command) -> Result<Value> {
    match cmd {
        Command::Analyze { input, adv, residuals, channels, out, csv } => {
            analyze(input, adv, residuals, &channels, &out, csv)
        }
        Command::Ratio { adv_stats, benign_stats, channel, out, csv } => {
            ratio(&adv_stats, &benign_stats, &channel, &out, csv)
        }
        Command::Perturb { input, out, kind, eps, sigma, seed, verify_bound, trials } => {
            let spec = PerturbSpec { kind, eps, sigma, seed };
            spec.validate().map_err(as_usage)?;
            if verify_bound {
                let report = verify_dct_bound(&spec, trials)?;
                eprintln!(
                    "max |C| = {:.4} in band {} over {} trials; bound {:.4}",
                    report.max, report.max_band, report.trials, report.bound
                );
                return Ok(json!({"format": 1, "command": "perturb", "bound": report}));
            }
            perturb(&input.expect("required by clap"), &out.expect("required by clap"), &spec)
        }
        Command::Design {
            benign,
            adv,
            ratio,
            eps,
            out,
            table_out,
            evaluator,
            evaluator_args,
            tau,
            color_path,
            csv,
        } => {
            let ratio = RatioFile::read(&ratio)?.ratio;
            let evaluator: Box<dyn Evaluator> = match evaluator {
                Some(program) => {
                    let mut e = ExternalEvaluator::new(program, &benign, &adv);
                    e.args = evaluator_args;
                    Box::new(e)
                }
                None => {
                    let (b, a) = paired_corpora(&benign, &adv)?;
                    Box::new(SignalEvaluator::new(b, a)?.with_tau(tau).with_color_path(color_path))
                }
            };
            let design = optimize(&ratio, eps, evaluator.as_ref())?;
            eprintln!(
                "k={} qs_of={} qs_af={} acc_dec={:.4} def_eff={:.4}{}",
                design.k,
                design.qs_of,
                design.qs_af,
                design.report.acc_dec,
                design.report.def_eff,
                if design.infeasible { " (no feasible point)" } else { "" }
            );
            design.write(&out)?;
            if let Some(path) = &table_out {
                design.table()?.write(path)?;
            }
            if csv {
                let rows = design
                    .grid
                    .iter()
                    .map(|g| vec![g.k.to_string(), g.qs_af.to_string(), g.acc_dec.to_string(), g.def_eff.to_string()]);
                print_csv(&["k", "qs_af", "acc_dec", "def_eff"], rows)?;
            }
            Ok(json!({
                "format": 1,
                "command": "design",
                "out": out,
                "k": design.k,
                "qs_of": design.qs_of,
                "qs_af": design.qs_af,
                "report": design.report,
                "infeasible": design.infeasible,
            }))
        }
        Command::Defend { input, out, codec } => {
            let cfg = codec_config(&codec)?;
            map_images(&input, &out, "png", |img| {
                let d = defend(img, &cfg)?;
                Ok(Output::Image(d))
            })
            .map(|files| summary("defend", &cfg, files))
        }
        Command::Encode { input, out, codec } => {
            let cfg = codec_config(&codec)?;
            map_images(&input, &out, ARCHIVE_EXT, |img| Ok(Output::Bytes(encode(img, &cfg)?.to_bytes())))
                .map(|files| summary("encode", &cfg, files))
        }
        Command::Decode { input, out, codec } => {
            let cfg = codec_config(&codec)?;
            decode_all(&input, &out, &cfg).map(|files| summary("decode", &cfg, files))
        }
        Command::ScaleTable { table, quality, out } => {
            let base = match table.as_str() {
                "standard-luma" => QuantTable::standard_luma(),
                "standard-chroma" => QuantTable::standard_chroma(),
                path => QuantTable::read(path)?,
            };
            let scaled = scale_table(&base, quality).map_err(as_usage)?;
            match &out {
                Some(path) => scaled.write(path)?,
                None => println!("{}", scaled.to_json()),
            }
            Ok(json!({"format": 1, "command": "scale-table", "zigzag_steps": scaled.zigzag_steps().to_vec()}))
        }
        Command::ExportAugment {
            input,
            out,
            codec,
            qualities,
            sigma,
            seed,
            xi,
            lr,
            decay,
            epochs,
            validate,
        } => {
            if validate {
                let manifest = AugmentManifest::read(out.join(augment::MANIFEST_NAME))?;
                let report = augment::validate_manifest(&manifest, Some(&out));
                for issue in &report.issues {
                    eprintln!("{issue}");
                }
                if !report.is_valid() {
                    return Err(Error::Validation(format!("{} manifest issue(s)", report.issues.len())));
                }
                return Ok(json!({"format": 1, "command": "export-augment", "valid": true}));
            }
            let cfg = codec_config(&codec)?;
            let corpus = read_corpus(&input.expect("required by clap"))?;
            let params = AugmentParams {
                qualities,
                sigma,
                seed,
                xi,
                learning_rate: lr,
                decay,
                epochs,
            };
            let m = augment::export(&corpus, &cfg, &params, &out)?;
            Ok(json!({
                "format": 1,
                "command": "export-augment",
                "manifest": out.join(augment::MANIFEST_NAME),
                "qualities": m.qualities,
                "images": corpus.len(),
            }))
        }
        Command::Vote { scores, rule, out } => {
            let models = scores.iter().map(ModelScores::read).collect::<Result<Vec<_>>>()?;
            let outcomes = vote_join(&models, rule)?;
            let mut text = String::new();
            for o in &outcomes {
                text.push_str(&serde_json::to_string(o)?);
                text.push('\n');
            }
            match &out {
                Some(path) => std::fs::write(path, &text).map_err(|e| io_err(path, e))?,
                None => print!("{text}"),
            }
            let incomplete = outcomes
                .iter()
                .filter(|o| matches!(o, dctshield::ensemble::VoteOutcome::Incomplete { .. }))
                .count();
            Ok(json!({"format": 1, "command": "vote", "images": outcomes.len(), "incomplete": incomplete}))
        }
        Command::Ablate { benign, adv, eps, seed, table, jpeg_quality, out, csv } => {
            let (b, a) = match adv {
                Some(adv) => paired_corpora(&benign, &adv)?,
                None => {
                    let spec = PerturbSpec::sign(eps, seed);
                    spec.validate().map_err(as_usage)?;
                    let b: Vec<ImageBuffer> = read_corpus(&benign)?.into_iter().map(|(_, i)| i).collect();
                    let a = b
                        .par_iter()
                        .enumerate()
                        .map(|(i, img)| apply(img, &spec, i as u64).map(|r| r.0))
                        .collect::<Result<Vec<_>>>()?;
                    (b, a)
                }
            };
            let report = run_ablation(&b, &a, QuantTable::read(&table)?, jpeg_quality)?;
            let doc = json!({"format": 1, "command": "ablate", "report": report});
            if let Some(path) = &out {
                dctshield::json::write_json(path, &doc)?;
            }
            if csv {
                let rows = report.rows.iter().map(|r| {
                    vec![
                        r.name.clone(),
                        r.config.color_path.to_string(),
                        r.mean_psnr.to_string(),
                        r.mean_suppression.to_string(),
                    ]
                });
                print_csv(&["config", "color_path", "mean_psnr", "mean_suppression"], rows)?;
            }
            Ok(doc)
        }
    }
}

fn as_usage(e: Error) -> Error {
    match e {
        Error::Validation(m) => Error::InvalidArgument(m),
        other => other,
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

fn codec_config(args: &CodecArgs) -> Result<CodecConfig> {
    let table = match args.table.as_str() {
        "standard-jpeg" => TableSpec::StandardJpeg,
        path => TableSpec::Custom(QuantTable::read(path)?),
    };
    let cfg = CodecConfig {
        color_path: args.color_path,
        table,
        quality: args.quality,
        level_shift: !args.no_level_shift,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn print_csv(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    let csv_err = |e: csv::Error| Error::Validation(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| io_err(Path::new("<stdout>"), e))
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Image files under `input` in sorted order, or `input` itself.
fn image_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        list_images(input)
    } else {
        Ok(vec![input.to_path_buf()])
    }
}

fn read_corpus(dir: &Path) -> Result<Vec<(String, ImageBuffer)>> {
    if dir.is_dir() {
        read_dir_images(dir)
    } else {
        Ok(vec![(file_stem(dir), read_image(dir)?)])
    }
}

/// Benign and adversarial images paired by name.
fn paired_corpora(benign: &Path, adv: &Path) -> Result<(Vec<ImageBuffer>, Vec<ImageBuffer>)> {
    let b = read_corpus(benign)?;
    let a = read_corpus(adv)?;
    let names = |c: &[(String, ImageBuffer)]| c.iter().map(|p| p.0.clone()).collect::<Vec<_>>();
    if names(&b) != names(&a) {
        return Err(Error::Validation(format!(
            "{} and {} do not contain the same image names",
            benign.display(),
            adv.display()
        )));
    }
    Ok((b.into_iter().map(|p| p.1).collect(), a.into_iter().map(|p| p.1).collect()))
}

enum Output {
    Image(ImageBuffer),
    Bytes(Vec<u8>),
}

/// Output file for `src`: inside `out` when processing a directory.
fn output_path(batch: bool, src: &Path, out: &Path, ext: &str) -> PathBuf {
    if batch {
        out.join(format!("{}.{ext}", file_stem(src)))
    } else {
        out.to_path_buf()
    }
}

fn write_output(path: &Path, output: Output) -> Result<String> {
    match output {
        Output::Image(img) => write_image(path, &img)?,
        Output::Bytes(b) => std::fs::write(path, b).map_err(|e| io_err(path, e))?,
    }
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn prepare_out(batch: bool, out: &Path) -> Result<()> {
    let dir = if batch { Some(out) } else { out.parent() };
    if let Some(d) = dir.filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
    }
    Ok(())
}

fn map_images<F>(input: &Path, out: &Path, ext: &str, f: F) -> Result<Vec<Value>>
where
    F: Fn(&ImageBuffer) -> Result<Output> + Sync,
{
    let batch = input.is_dir();
    let inputs = image_inputs(input)?;
    prepare_out(batch, out)?;
    inputs
        .par_iter()
        .map(|src| {
            let img = read_image(src)?;
            let dst = output_path(batch, src, out, ext);
            let sha256 = write_output(&dst, f(&img)?)?;
            Ok(json!({"name": file_stem(src), "out": dst, "sha256": sha256}))
        })
        .collect()
}

fn decode_all(input: &Path, out: &Path, cfg: &CodecConfig) -> Result<Vec<Value>> {
    let batch = input.is_dir();
    let inputs = if batch {
        sorted_with_ext(input, ARCHIVE_EXT)?
    } else {
        vec![input.to_path_buf()]
    };
    prepare_out(batch, out)?;
    inputs
        .par_iter()
        .map(|src| {
            let img = decode(&CoefArchive::read(src)?, cfg)?;
            let dst = output_path(batch, src, out, "png");
            let sha256 = write_output(&dst, Output::Image(img))?;
            Ok(json!({"name": file_stem(src), "out": dst, "sha256": sha256}))
        })
        .collect()
}

fn sorted_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(out)
}

fn summary(command: &str, cfg: &CodecConfig, files: Vec<Value>) -> Value {
    let hash: String = cfg
        .hash()
        .map(|h| h.iter().map(|b| format!("{b:02x}")).collect())
        .unwrap_or_default();
    json!({"format": 1, "command": command, "config_hash": hash, "files": files})
}

fn perturb(input: &Path, out: &Path, spec: &PerturbSpec) -> Result<Value> {
    let batch = input.is_dir();
    let inputs = image_inputs(input)?;
    prepare_out(batch, out)?;
    let residual_dir = if batch {
        out.join("residuals")
    } else {
        out.parent().unwrap_or(Path::new("")).join("residuals")
    };
    std::fs::create_dir_all(&residual_dir).map_err(|e| io_err(&residual_dir, e))?;
    let files = inputs
        .par_iter()
        .enumerate()
        .map(|(i, src)| {
            let img = read_image(src)?;
            let (adv, residual) = apply(&img, spec, i as u64)?;
            let dst = output_path(batch, src, out, "png");
            let sha256 = write_output(&dst, Output::Image(adv))?;
            let res_path = residual_dir.join(format!("{}.{RESIDUAL_EXT}", file_stem(src)));
            residual.write(&res_path)?;
            Ok(json!({
                "name": file_stem(src),
                "out": dst,
                "residual": res_path,
                "sha256": sha256,
                "linf": residual.linf_injected(),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let kind = match spec.kind {
        PerturbKind::Sign => "sign",
        PerturbKind::Gaussian => "gaussian",
        PerturbKind::Uniform => "uniform",
    };
    Ok(json!({"format": 1, "command": "perturb", "kind": kind, "seed": spec.seed, "files": files}))
}

fn analyze(
    input: Option<PathBuf>,
    adv: Option<PathBuf>,
    residuals: Option<PathBuf>,
    channels: &[ChannelTag],
    out: &Path,
    csv: bool,
) -> Result<Value> {
    let (source, stats) = match (input, adv, residuals) {
        (_, _, Some(dir)) => {
            let files = sorted_with_ext(&dir, RESIDUAL_EXT)?;
            let stats = channels
                .iter()
                .map(|&tag| {
                    estimate_band_stats_with(files.len(), tag, |i| {
                        residual_channel_plane(&Residual::read(&files[i])?.injected_planes(), tag)
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ("residual", stats)
        }
        (Some(benign), Some(adv), None) => {
            let (b, a) = paired_corpora(&benign, &adv)?;
            let res = b
                .iter()
                .zip(&a)
                .map(|(b, a)| pair_residual(b, a))
                .collect::<Result<Vec<_>>>()?;
            let stats = channels
                .iter()
                .map(|&tag| dctshield::stats::residual_band_stats(&res, tag))
                .collect::<Result<Vec<_>>>()?;
            ("residual", stats)
        }
        (Some(benign), None, None) => {
            let images: Vec<ImageBuffer> = read_corpus(&benign)?.into_iter().map(|p| p.1).collect();
            let stats = channels
                .iter()
                .map(|&tag| image_band_stats(&images, tag))
                .collect::<Result<Vec<_>>>()?;
            ("benign", stats)
        }
        _ => return Err(Error::InvalidArgument("give --in, --in with --adv, or --residuals".into())),
    };
    let file = StatsFile::new(source, stats);
    dctshield::json::write_json(out, &file)?;
    if csv {
        let rows = file.channels.iter().flat_map(|s| {
            s.delta
                .iter()
                .enumerate()
                .map(|(band, d)| vec![s.channel.to_string(), band.to_string(), d.to_string()])
                .collect::<Vec<_>>()
        });
        print_csv(&["channel", "band", "delta"], rows)?;
    }
    let means: serde_json::Map<String, Value> = file
        .channels
        .iter()
        .map(|s| (s.channel.to_string(), json!(s.mean_ac())))
        .collect();
    Ok(json!({"format": 1, "command": "analyze", "source": source, "out": out, "mean_ac": means}))
}

fn ratio(adv: &Path, benign: &Path, channel: &str, out: &Path, csv: bool) -> Result<Value> {
    let a = StatsFile::read(adv)?;
    let b = StatsFile::read(benign)?;
    let pick = |f: &StatsFile, tag: ChannelTag, path: &Path| {
        f.channel(tag)
            .cloned()
            .ok_or_else(|| Error::Validation(format!("{}: no {tag} channel", path.display())))
    };
    let r = if channel.eq_ignore_ascii_case("rgb") {
        let [ar, ag, ab] = ChannelTag::RGB.map(|t| pick(&a, t, adv));
        let [br, bg, bb] = ChannelTag::RGB.map(|t| pick(&b, t, benign));
        let (ar, ag, ab, br, bg, bb) = (ar?, ag?, ab?, br?, bg?, bb?);
        merge_rgb_ratio([&ar, &ag, &ab], [&br, &bg, &bb])?
    } else {
        let tag: ChannelTag = channel.parse().map_err(as_usage)?;
        band_ratio(&pick(&a, tag, adv)?, &pick(&b, tag, benign)?)?
    };
    let file = RatioFile::new(r);
    dctshield::json::write_json(out, &file)?;
    if csv {
        let mut rank = [0usize; 64];
        for (i, &b) in file.ratio.order.iter().enumerate() {
            rank[b] = i;
        }
        let rows = (0..64).map(|b| vec![b.to_string(), file.ratio.ratio[b].to_string(), rank[b].to_string()]);
        print_csv(&["band", "ratio", "rank"], rows)?;
    }
    Ok(json!({"format": 1, "command": "ratio", "out": out, "order": file.ratio.order.to_vec()}))
}

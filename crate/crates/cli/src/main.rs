use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use alttext::captioner::{read_checkpoint, train, write_checkpoint, write_train_log, ExperimentConfig};
use alttext::corpus::{
    curate, parse_records, read_samples, split_corpus, write_records, write_rejects, write_samples, FilterConfig,
    DEFAULT_RATIOS,
};
use alttext::decoding::{read_predictions, write_predictions, DecodeConfig, Method, Rerank};
use alttext::dedup::{dedup_visual, read_thumbnails, thumbnail, write_thumbnails, ClusterConfig, Thumbnail};
use alttext::harness::{
    baseline_copy_tweet, baseline_nearest_neighbor, build_vocab, encode_samples, generate, run_experiment,
    synth_dataset, HarnessError, Result, RunConfig, SynthSpec,
};
use alttext::metrics::{evaluate, write_report_tsv, Table, METEOR_NOTE};
use alttext::vision::{load_embeddings, write_embeddings, ImageEmbedding, ToyEncoder};
use alttext::{Raster, Sample, Variant, Vocab};

#[derive(Parser)]
#[command(name = "alttext", version, about = "Tweet-conditioned alt-text generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw JSONL records and apply the curation rules.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rejects: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        min_tokens: usize,
        #[arg(long, default_value_t = 150)]
        max_tokens: usize,
    },
    /// Drop exact alt-text duplicates, then near-duplicate images.
    Dedup {
        #[arg(long)]
        corpus: PathBuf,
        /// Directory holding the image files named in the corpus.
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value_t = 100)]
        threshold: u32,
        #[arg(long, default_value_t = 0)]
        tolerance: u8,
        /// Thumbnail cache; read when present, written otherwise.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a corpus by tweet into train/val/test files.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated train,val,test fractions.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write a synthetic glyph dataset (raw.jsonl and images/).
    Synth {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 8)]
        attrs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        size: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the image embedding file.
    Embed {
        /// Encode every image in --images with the seeded toy encoder.
        #[arg(long, conflicts_with = "import", requires = "images")]
        toy: bool,
        /// Convert a TSV of `image_id<TAB>v1 v2 ...` rows.
        #[arg(long, required_unless_present = "toy")]
        import: Option<PathBuf>,
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a captioner; writes model.ckpt, vocab.txt and train_log.csv.
    Train {
        #[arg(long, default_value = "text_image")]
        variant: Variant,
        /// TOML file with optional [model] and [train] tables and vocab_max.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Overrides the model and training seeds.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Decode captions for a corpus.
    Generate {
        #[command(flatten)]
        model: ModelFiles,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against reference alt-texts.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate and evaluate in one step, recording the config hash.
    Run {
        #[command(flatten)]
        model: ModelFiles,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Predictions from a non-learned baseline.
    Baseline {
        #[arg(long, value_enum)]
        kind: BaselineKind,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, required_if_eq("kind", "nn"))]
        train: Option<PathBuf>,
        #[arg(long, required_if_eq("kind", "nn"))]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ModelFiles {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Beam)]
    method: MethodArg,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long)]
    block_trigrams: bool,
    #[arg(long, default_value = "none")]
    rerank: Rerank,
    #[arg(long, default_value_t = 150)]
    max_len: usize,
    #[arg(long, default_value_t = 0.0)]
    length_penalty: f64,
    /// Seed of the tweet permutation used by rand_text models.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Greedy,
    Beam,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BaselineKind {
    Nn,
    Copy,
}

impl DecodeArgs {
    fn config(&self) -> Result<DecodeConfig> {
        if self.beam == 0 || self.max_len == 0 {
            return Err(HarnessError::Usage("--beam and --max-len must be positive".into()));
        }
        Ok(DecodeConfig {
            method: match self.method {
                MethodArg::Greedy => Method::Greedy,
                MethodArg::Beam => Method::BeamSearch,
            },
            beam_size: self.beam,
            block_trigrams: self.block_trigrams,
            max_len: self.max_len,
            rerank: self.rerank,
            length_penalty: self.length_penalty,
        })
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|_| HarnessError::MissingInput(path.to_path_buf()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn save(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    write(&mut w)?;
    w.flush()?;
    Ok(())
}

fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    Ok(read_samples(open(path)?)?)
}

fn load_embedding_file(path: &Path) -> Result<BTreeMap<String, ImageEmbedding>> {
    Ok(load_embeddings(open(path)?)?)
}

fn image_file(dir: &Path, sample_path: &str) -> PathBuf {
    let name = Path::new(sample_path).file_name().unwrap_or(sample_path.as_ref());
    dir.join(name)
}

/// Image files in `dir`, sorted by name.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<io::Result<_>>()?;
    files.retain(|p| {
        p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
    });
    files.sort();
    Ok(files)
}

fn parse_embedding_tsv(path: &Path) -> Result<Vec<ImageEmbedding>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}:{}: malformed row", path.display(), i + 1),
            )
        };
        let (id, values) = line.split_once('\t').ok_or_else(bad)?;
        let vec = values
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad())?;
        out.push(ImageEmbedding::new(id, vec)?);
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            input,
            out,
            rejects,
            min_tokens,
            max_tokens,
        } => {
            let parsed = parse_records(open(&input)?)?;
            for e in &parsed.errors {
                eprintln!("skipped: {e}");
            }
            let config = FilterConfig {
                min_tokens,
                max_tokens,
                ..FilterConfig::default()
            };
            let (accepted, rejected) = curate(&parsed.records, &config);
            save(&out, |w| write_samples(w, &accepted))?;
            if let Some(path) = rejects {
                save(&path, |w| write_rejects(w, &rejected))?;
            }
            println!(
                "accepted {} rejected {} malformed {}",
                accepted.len(),
                rejected.len(),
                parsed.errors.len()
            );
        }
        Command::Dedup {
            corpus,
            images,
            threshold,
            tolerance,
            cache,
            out,
        } => {
            let samples = load_samples(&corpus)?;
            let cached = match &cache {
                Some(p) if p.exists() => Some(read_thumbnails(open(p)?)?),
                _ => None,
            };
            let thumbs: HashMap<String, Thumbnail> = match cached {
                Some(list) => list.into_iter().map(|t| (t.image_id.clone(), t)).collect(),
                None => {
                    let mut map = HashMap::new();
                    for s in &samples {
                        if !map.contains_key(&s.image_id) {
                            let img = Raster::open(&image_file(&images, &s.path))?;
                            map.insert(s.image_id.clone(), thumbnail(&img, s.image_id.clone(), s.created_at));
                        }
                    }
                    if let Some(p) = &cache {
                        let mut list: Vec<Thumbnail> = map.values().cloned().collect();
                        list.sort_by(|a, b| a.image_id.cmp(&b.image_id));
                        save(p, |w| write_thumbnails(w, &list))?;
                    }
                    map
                }
            };
            let config = ClusterConfig {
                threshold,
                tolerance,
                ..ClusterConfig::default()
            };
            let kept = dedup_visual(&samples, &thumbs, &config)?;
            save(&out, |w| write_samples(w, &kept))?;
            println!("kept {} of {}", kept.len(), samples.len());
        }
        Command::Split {
            corpus,
            ratios,
            seed,
            out_dir,
        } => {
            let ratios = match ratios {
                Some(r) if r.len() == 3 => [r[0], r[1], r[2]],
                Some(_) => return Err(HarnessError::Usage("--ratios takes exactly three values".into())),
                None => DEFAULT_RATIOS,
            };
            let split = split_corpus(&load_samples(&corpus)?, ratios, seed)?;
            for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
                save(&out_dir.join(format!("{name}.jsonl")), |w| write_samples(w, part))?;
            }
            println!(
                "train {} val {} test {}",
                split.train.len(),
                split.val.len(),
                split.test.len()
            );
        }
        Command::Synth {
            n,
            classes,
            attrs,
            seed,
            size,
            out,
        } => {
            if classes < 2 || attrs < 2 || size < 8 {
                return Err(HarnessError::Usage(
                    "need --classes >= 2, --attrs >= 2 and --size >= 8".into(),
                ));
            }
            let spec = SynthSpec {
                n_samples: n,
                n_image_classes: classes,
                n_text_attributes: attrs,
                seed,
                image_size: size,
            };
            let (images, records) = synth_dataset(&spec);
            let dir = out.join("images");
            fs::create_dir_all(&dir)?;
            for img in &images {
                img.raster
                    .save_png(&dir.join(format!("{}.png", img.image_id)))
                    .map_err(io::Error::other)?;
            }
            save(&out.join("raw.jsonl"), |w| write_records(w, &records))?;
            println!("wrote {} samples to {}", records.len(), out.display());
        }
        Command::Embed {
            toy,
            import,
            images,
            seed,
            out,
        } => {
            let embeddings = if toy {
                let dir = images.expect("clap requires --images with --toy");
                let encoder = ToyEncoder::new(seed);
                list_images(&dir)?
                    .iter()
                    .map(|p| {
                        let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                        Ok(encoder.encode(&Raster::open(p)?, id))
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                parse_embedding_tsv(&import.expect("clap requires --import without --toy"))?
            };
            alttext::vision::check_unique(&embeddings)?;
            save(&out, |w| write_embeddings(w, &embeddings))?;
            println!("embedded {} images", embeddings.len());
        }
        Command::Train {
            variant,
            config,
            train: train_path,
            val,
            embeddings,
            seed,
            out_dir,
        } => {
            let mut exp = match &config {
                Some(p) => ExperimentConfig::from_toml(
                    &fs::read_to_string(p).map_err(|_| HarnessError::MissingInput(p.clone()))?,
                )?,
                None => ExperimentConfig::default(),
            };
            if let Some(seed) = seed {
                exp.model.seed = seed;
                exp.train.seed = seed;
            }
            let train_samples = load_samples(&train_path)?;
            let val_samples = load_samples(&val)?;
            let emb = load_embedding_file(&embeddings)?;
            let vocab = build_vocab(&train_samples, exp.vocab_max.unwrap_or(10_000));
            exp.model.vocab_size = vocab.len();
            exp.model.variant = variant;
            let train_set = encode_samples(&train_samples, &emb, &vocab, variant, exp.model.seed)?;
            let val_set = encode_samples(&val_samples, &emb, &vocab, variant, exp.model.seed.wrapping_add(1))?;
            let outcome = train(&exp.model, &exp.train, &train_set, &val_set)?;
            fs::create_dir_all(&out_dir)?;
            let mut w = create(&out_dir.join("model.ckpt"))?;
            write_checkpoint(&mut w, &outcome.state)?;
            w.flush()?;
            save(&out_dir.join("vocab.txt"), |w| vocab.write(w))?;
            save(&out_dir.join("train_log.csv"), |w| write_train_log(w, &outcome.log))?;
            let best = &outcome.log[outcome.best_epoch - 1];
            println!(
                "best epoch {} of {}: train nll {:.4} val nll {:.4} ({} steps)",
                outcome.best_epoch,
                outcome.log.len(),
                best.train_nll,
                best.val_nll,
                outcome.steps
            );
        }
        Command::Generate {
            model,
            corpus,
            embeddings,
            decode,
            out,
        } => {
            let state = read_checkpoint(open(&model.checkpoint)?)?;
            let vocab = Vocab::read(open(&model.vocab)?)?;
            let samples = load_samples(&corpus)?;
            let emb = load_embedding_file(&embeddings)?;
            let preds = generate(&state, &vocab, &samples, &emb, &decode.config()?, decode.seed)?;
            save(&out, |w| write_predictions(w, &preds))?;
            println!("wrote {} predictions", preds.len());
        }
        Command::Evaluate {
            pred,
            reference,
            label,
            out,
        } => {
            let preds = read_predictions(open(&pred)?)?;
            let refs = load_samples(&reference)?;
            let report = evaluate(&preds, &refs)?;
            let label = label.unwrap_or_else(|| {
                pred.file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("system")
                    .to_string()
            });
            let rows = [(label.as_str(), &report)];
            print!("{}", Table(&rows));
            if let Some(path) = out {
                save(&path, |w| write_report_tsv(w, &rows, &[METEOR_NOTE.to_string()]))?;
            }
        }
        Command::Run {
            model,
            corpus,
            embeddings,
            variant,
            decode,
            pred,
            report,
        } => {
            let config = RunConfig {
                corpus,
                embeddings,
                checkpoint: model.checkpoint,
                vocab: model.vocab,
                predictions: pred,
                report,
                variant,
                decode: decode.config()?,
                seed: decode.seed,
            };
            let result = run_experiment(&config)?;
            let label = config.decode.label();
            print!("{}", Table(&[(label.as_str(), &result)]));
        }
        Command::Baseline {
            kind,
            test,
            train: train_path,
            embeddings,
            out,
        } => {
            let test_samples = load_samples(&test)?;
            let preds = match kind {
                BaselineKind::Copy => baseline_copy_tweet(&test_samples),
                BaselineKind::Nn => {
                    let train_samples = load_samples(&train_path.expect("clap requires --train"))?;
                    let emb = load_embedding_file(&embeddings.expect("clap requires --embeddings"))?;
                    baseline_nearest_neighbor(&test_samples, &train_samples, &emb)?
                }
            };
            save(&out, |w| write_predictions(w, &preds))?;
            println!("wrote {} predictions", preds.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

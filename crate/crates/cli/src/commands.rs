use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;
use wmispn::bench::{self, BenchConfig};
use wmispn::data::{load_csv, parse_schema_sidecar, split_dataset, Dataset, SplitSpec};
use wmispn::model::{self, dataset_digest, ModelFile};
use wmispn::pipeline::{train, TrainConfig};
use wmispn::query::{answer, answer_per_pass, explain, normalize, parse_query};
use wmispn::spn::LikelihoodMode;
use wmispn::structure::LearnParams;
use wmispn::wmi::{conditional_wmi, parse_theory, wmi, Expr};

use crate::{Command, CsvArgs, Part};

pub const PLOT_POINTS: usize = 512;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] wmispn::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| wmispn::Error::Data(format!("{}: {e}", path.display())).into())
}

fn load_data(path: &Path, csv: &CsvArgs) -> Result<Dataset> {
    load_csv(path, csv.delimiter, !csv.no_header)
        .map_err(|e| wmispn::Error::Data(format!("{}: {e}", path.display())).into())
}

fn load_model(path: &Path) -> Result<ModelFile> {
    Ok(model::from_text(&read(path)?)?)
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Learn {
            data,
            out,
            schema,
            bins,
            bins_max,
            order_min,
            order_max,
            alpha,
            cluster_penalty,
            min_slice,
            split,
            seed,
            csv,
        } => {
            if let Some(b) = bins {
                if b < 2 {
                    return Err(CliError::Usage(format!("--bins must be at least 2, got {b}")));
                }
            }
            if bins_max < 2 {
                return Err(CliError::Usage("--bins-max must be at least 2".into()));
            }
            if order_min > order_max || order_max > wmispn::polyfit::MAX_ORDER {
                return Err(CliError::Usage(format!(
                    "need --order-min <= --order-max <= {}",
                    wmispn::polyfit::MAX_ORDER
                )));
            }
            let d = load_data(&data, &csv)?;
            let hints = match schema {
                Some(p) => Some(parse_schema_sidecar(&read(&p)?)?),
                None => None,
            };
            let cfg = TrainConfig {
                bins,
                bins_grid: 2..=bins_max,
                orders: order_min..=order_max,
                params: LearnParams {
                    alpha,
                    cluster_penalty,
                    min_slice,
                    seed,
                    ..LearnParams::default()
                },
                split: SplitSpec {
                    train: split.0,
                    valid: split.1,
                    test: split.2,
                    seed,
                },
                hints,
                ..TrainConfig::default()
            };
            learn(&d, &cfg, &out)
        }
        Command::Eval {
            model,
            data,
            density,
            part,
            csv,
        } => {
            let m = load_model(&model)?;
            let d = load_data(&data, &csv)?;
            let mode = if density {
                LikelihoodMode::Density
            } else {
                LikelihoodMode::BinMass
            };
            print!("{}", eval(&m, &d, part, mode)?);
            Ok(())
        }
        Command::Query {
            model,
            query,
            explain: show_plan,
            per_pass,
        } => {
            let m = load_model(&model)?;
            let spn = &m.model.spn;
            let q = normalize(&parse_query(&query)?, spn)?;
            if show_plan {
                print!("{}", explain(spn, &q)?);
            }
            let p = if per_pass {
                let (p, passes) = answer_per_pass(spn, &q)?;
                if show_plan {
                    println!("passes {passes}");
                }
                p
            } else {
                answer(spn, &q)?
            };
            println!("{p:.6}");
            Ok(())
        }
        Command::Bench {
            model,
            reps,
            warmup,
            max_len,
            include_parse,
            seed,
        } => {
            if reps < bench::MIN_REPS {
                return Err(CliError::Usage(format!("--reps must be at least {}", bench::MIN_REPS)));
            }
            let m = load_model(&model)?;
            let cfg = BenchConfig {
                max_len,
                reps,
                warmup,
                include_parse,
                seed,
                ..BenchConfig::default()
            };
            println!("{}", bench::run(&m.model.spn, &cfg)?);
            Ok(())
        }
        Command::Plot { model, feature, out } => {
            let m = load_model(&model)?;
            let text = plot(&m, &feature)?;
            match out {
                Some(p) => fs::write(&p, text).map_err(wmispn::Error::from)?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Wmi { theory } => {
            let file = parse_theory(&read(&theory)?)?;
            println!("wmi {}", wmi(&file.theory)?);
            if let Some(q) = &file.query {
                let e = file.evidence.clone().unwrap_or(Expr::Const(true));
                println!("conditional {}", conditional_wmi(&file.theory, q, &e)?);
            }
            Ok(())
        }
    }
}

fn learn(d: &Dataset, cfg: &TrainConfig, out: &Path) -> Result<()> {
    let t = train(d, cfg)?;
    for (f, r) in t.model.schema.features.iter().zip(&t.reports) {
        if let Some(r) = r {
            println!(
                "column {}: bins {} order {} bic {:.4}{}",
                f.name,
                r.bins,
                r.order,
                r.bic,
                if r.clipped { " (clipped)" } else { "" }
            );
        }
    }
    let s = &t.stats;
    println!(
        "network: {} sums, {} products, {} leaves, {} fallbacks, {} edges",
        s.sums,
        s.products,
        s.leaves,
        s.fallbacks,
        t.model.spn.n_edges()
    );
    println!(
        "rows: train {} valid {} test {}",
        t.train.n_rows(),
        t.valid.n_rows(),
        t.test.n_rows()
    );
    println!("valid_ll {}", t.valid_ll.mean);
    println!("test_ll {}", t.test_ll.mean);
    let file = ModelFile {
        model: t.model,
        params: cfg.params.clone(),
        split: cfg.split,
        bins: cfg.bins,
        digest: dataset_digest(d),
    };
    model::save(&file, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn eval(m: &ModelFile, d: &Dataset, part: Option<Part>, mode: LikelihoodMode) -> Result<String> {
    let mut out = String::new();
    let mut warnings = 0;
    let rows = match part {
        None => d.clone(),
        Some(p) => {
            if dataset_digest(d) != m.digest {
                eprintln!("warning: data differs from the file the model was trained on");
                warnings += 1;
            }
            let (tr, va, te) = split_dataset(d, &m.split)?;
            match p {
                Part::Train => tr,
                Part::Valid => va,
                Part::Test => te,
            }
        }
    };
    if rows.is_empty() {
        return Err(wmispn::Error::Data("no rows to evaluate".into()).into());
    }
    let encoded = m.model.encode(&rows)?;
    let ll = m.model.spn.log_likelihood(&encoded, mode)?;
    if encoded.clamped > 0 {
        eprintln!("warning: {} values outside the training range were clamped", encoded.clamped);
        warnings += 1;
    }
    if ll.floored_rows > 0 {
        eprintln!("warning: {} rows hit the probability floor", ll.floored_rows);
        warnings += 1;
    }
    let _ = writeln!(out, "rows {}", ll.rows);
    let _ = writeln!(out, "mean_ll {}", ll.mean);
    let _ = writeln!(out, "warnings {warnings}");
    Ok(out)
}

fn plot(m: &ModelFile, feature: &str) -> Result<String> {
    let j = m
        .model
        .schema
        .index_of(feature)
        .ok_or_else(|| wmispn::Error::Data(format!("unknown feature {feature:?}")))?;
    let density = m.model.densities[j]
        .as_ref()
        .ok_or_else(|| wmispn::Error::Data(format!("{feature} is not continuous")))?;
    let mut out = String::from("piece,x,density\n");
    for (i, p) in density.pieces().iter().enumerate() {
        for k in 0..PLOT_POINTS {
            let x = if k + 1 == PLOT_POINTS {
                p.hi
            } else {
                p.lo + (p.hi - p.lo) * k as f64 / (PLOT_POINTS - 1) as f64
            };
            let y = p.eval(x);
            let _ = writeln!(out, "{i},{x},{y}");
        }
    }
    Ok(out)
}

//! The experiment subcommands: segment, sweep, perturb, vocab, generate,
//! oracle, stats.

use crate::config::{
    config_err, init_seed, runtime_err, CliError, CommonOpts, InitChoice, Resolved,
};
use anyhow::{anyhow, Context};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use wordseg::generator::{gen_bigram, gen_unigram, GenConfig, PDollar};
use wordseg::sampler::{aggregate, exact_posterior, flat_sites};
use wordseg::{
    eval, Boost, Corpus, EvalReport, GibbsSampler, Model, ModelParams, PhonemeDist,
    SamplerOutput, SegState, VocabPrior,
};

fn ensure_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))
        .map_err(CliError::Runtime)
}

fn write_file(out: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = out.join(name);
    fs::write(&path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(CliError::Runtime)
}

fn write_manifest(out: &Path, manifest: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_file(out, "manifest.json", &(text + "\n"))
}

fn manifest_base(command: &str, resolved: &Resolved) -> serde_json::Value {
    serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "settings": resolved,
    })
}

fn trace_csv(output: &SamplerOutput) -> String {
    let mut text = String::from("iteration,log_joint,token_count,gamma\n");
    for row in &output.trace {
        let _ = writeln!(
            text,
            "{},{:.6},{},{:.6}",
            row.iteration, row.log_joint, row.tokens, row.gamma
        );
    }
    text
}

fn top_words_tsv(state: &SegState, corpus: &Corpus, k: usize) -> String {
    let mut text = String::from("word\tcount\n");
    for (word, count) in eval::top_k_words(state, corpus, k) {
        let _ = writeln!(text, "{word}\t{count}");
    }
    text
}

fn report_tsv(report: &EvalReport) -> String {
    format!("{}\n{}\n", EvalReport::tsv_header(), report.tsv_row())
}

struct Pipeline {
    resolved: Resolved,
    corpus: Corpus,
    params: ModelParams,
}

impl Pipeline {
    fn prepare(common: &CommonOpts) -> Result<Pipeline, CliError> {
        let resolved = common.resolve()?;
        let corpus = resolved.load_corpus()?;
        if corpus.internal_positions() == 0 {
            // nothing to sample; still legal, but flag the odd corpus
            eprintln!("note: corpus has no utterance-internal positions");
        }
        let params = resolved.params_for(&corpus)?;
        Ok(Pipeline {
            resolved,
            corpus,
            params,
        })
    }

    fn initial_state(&self) -> Result<SegState, CliError> {
        match self.resolved.init {
            InitChoice::Random => Ok(SegState::random_init(
                &self.corpus,
                self.resolved.p_init,
                init_seed(self.resolved.seed),
            )),
            InitChoice::Gold => self
                .corpus
                .gold_state()
                .ok_or_else(|| config_err(anyhow!("--init gold requires gold boundaries"))),
        }
    }

    /// Runs the chain and aggregates samples into the reported state. A run
    /// with zero sampling iterations reports its final (initial) state.
    fn run(
        &self,
        init: SegState,
        vocab: Option<&VocabPrior>,
    ) -> Result<(SamplerOutput, SegState), CliError> {
        let mut sampler = GibbsSampler::new(
            &self.corpus,
            self.params.clone(),
            self.resolved.model(),
            init,
            self.resolved.seed,
        )
        .map_err(config_err)?
        .with_visit_order(self.resolved.visit());
        let output = sampler.run(&self.resolved.schedule(), vocab).map_err(runtime_err)?;
        let state = if output.samples.is_empty() {
            output.final_state.clone()
        } else {
            aggregate(&output.samples, self.resolved.aggregate_mode(), &self.corpus)
                .map_err(runtime_err)?
        };
        Ok((output, state))
    }

    fn write_outputs(
        &self,
        output: &SamplerOutput,
        state: &SegState,
        manifest: serde_json::Value,
    ) -> Result<Option<EvalReport>, CliError> {
        let out = &self.resolved.out;
        ensure_out(out)?;
        write_manifest(out, &manifest)?;
        write_file(out, "segmented.txt", &state.render(&self.corpus))?;
        write_file(out, "trace.csv", &trace_csv(output))?;
        write_file(out, "top_words.tsv", &top_words_tsv(state, &self.corpus, 20))?;
        let report = if self.corpus.has_gold() {
            let report = eval::evaluate(state, &self.corpus).map_err(runtime_err)?;
            write_file(out, "report.tsv", &report_tsv(&report))?;
            write_file(out, "report.json", &(report.to_json() + "\n"))?;
            Some(report)
        } else {
            None
        };
        Ok(report)
    }
}

fn print_report(report: &EvalReport) {
    println!(
        "tokens   P {:.3}  R {:.3}  F {:.3}",
        report.p, report.r, report.f
    );
    println!(
        "boundary P {:.3}  R {:.3}  F {:.3}",
        report.bp, report.br, report.bf
    );
    println!(
        "lexicon  P {:.3}  R {:.3}  F {:.3}",
        report.lp, report.lr, report.lf
    );
    println!(
        "mean word length: predicted {:.3}, gold {:.3}",
        report.mean_pred_len, report.mean_gold_len
    );
}

pub fn cmd_segment(common: &CommonOpts) -> Result<(), CliError> {
    let pipeline = Pipeline::prepare(common)?;
    let init = pipeline.initial_state()?;
    let (output, state) = pipeline.run(init, None)?;
    let manifest = manifest_base("segment", &pipeline.resolved);
    let report = pipeline.write_outputs(&output, &state, manifest)?;
    println!(
        "segmented {} utterances into {} tokens -> {}",
        pipeline.corpus.len(),
        state.token_count(),
        pipeline.resolved.out.display()
    );
    if let Some(report) = report {
        print_report(&report);
    }
    Ok(())
}

pub fn cmd_perturb(
    common: &CommonOpts,
    k: usize,
    perturb_seed: Option<u64>,
) -> Result<(), CliError> {
    let pipeline = Pipeline::prepare(common)?;
    let pseed = perturb_seed.unwrap_or(pipeline.resolved.seed);
    let init = SegState::perturb_gold(&pipeline.corpus, k, pseed)
        .map_err(config_err)?;
    let gold = pipeline.corpus.gold_state().expect("perturb_gold checked gold");
    let flipped = init.hamming(&gold);
    let (output, state) = pipeline.run(init, None)?;
    let mut manifest = manifest_base("perturb", &pipeline.resolved);
    manifest["perturb"] = serde_json::json!({
        "k": k,
        "perturb_seed": pseed,
        "positions_differing_from_gold": flipped,
    });
    let report = pipeline.write_outputs(&output, &state, manifest)?;
    println!(
        "perturbed gold with k = {k} toggles ({flipped} positions differ) -> {}",
        pipeline.resolved.out.display()
    );
    if let Some(report) = report {
        print_report(&report);
    }
    Ok(())
}

pub fn parse_boost(raw: &str) -> Result<Boost, CliError> {
    if raw.eq_ignore_ascii_case("inf") || raw.eq_ignore_ascii_case("infinity") {
        return Ok(Boost::Infinite);
    }
    let value: f64 = raw
        .parse()
        .map_err(|e| config_err(anyhow!("cannot parse boost {raw:?}: {e}")))?;
    Ok(Boost::Finite(value))
}

pub fn cmd_vocab(
    common: &CommonOpts,
    vocab_size: usize,
    boost_raw: &str,
    vocab_seed: Option<u64>,
) -> Result<(), CliError> {
    let pipeline = Pipeline::prepare(common)?;
    let boost = parse_boost(boost_raw)?;
    let vseed = vocab_seed.unwrap_or(pipeline.resolved.seed);
    let vocab = VocabPrior::build(&pipeline.corpus, vocab_size, boost, vseed)
        .map_err(config_err)?;
    let init = pipeline.initial_state()?;
    let (output, state) = pipeline.run(init, Some(&vocab))?;
    let mut manifest = manifest_base("vocab", &pipeline.resolved);
    manifest["vocab"] = serde_json::json!({
        "size": vocab_size,
        "boost": boost_raw,
        "vocab_seed": vseed,
        "words": vocab.sorted_words(),
    });
    let report = pipeline.write_outputs(&output, &state, manifest)?;
    write_file(
        &pipeline.resolved.out,
        "vocab.txt",
        &(vocab.sorted_words().join("\n") + "\n"),
    )?;
    println!(
        "ran with a {}-word vocabulary prior (boost {boost_raw}) -> {}",
        vocab.len(),
        pipeline.resolved.out.display()
    );
    if let Some(report) = report {
        print_report(&report);
    }
    Ok(())
}

pub struct SweepGrids {
    pub alpha0: Option<String>,
    pub p_hash: Option<String>,
    pub alpha1: Option<String>,
    pub seeds: usize,
    pub jobs: Option<usize>,
}

fn parse_grid(raw: &Option<String>, name: &str) -> Result<Option<Vec<f64>>, CliError> {
    let Some(raw) = raw else { return Ok(None) };
    let mut values = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        values.push(part.parse::<f64>().map_err(|e| {
            config_err(anyhow!("cannot parse {name} grid value {part:?}: {e}"))
        })?);
    }
    if values.is_empty() {
        return Err(config_err(anyhow!("{name} grid is empty")));
    }
    Ok(Some(values))
}

pub fn cmd_sweep(common: &CommonOpts, grids: &SweepGrids) -> Result<(), CliError> {
    let resolved = common.resolve()?;
    let corpus = resolved.load_corpus()?;
    let alpha0s = parse_grid(&grids.alpha0, "alpha0")?;
    let p_hashes = parse_grid(&grids.p_hash, "p_hash")?;
    let alpha1s = parse_grid(&grids.alpha1, "alpha1")?;
    if alpha0s.is_none() && p_hashes.is_none() && alpha1s.is_none() {
        return Err(config_err(anyhow!(
            "sweep requires at least one of --alpha0-grid, --p-hash-grid, --alpha1-grid"
        )));
    }
    if grids.seeds == 0 {
        return Err(config_err(anyhow!("--seeds must be >= 1")));
    }
    let alpha0s = alpha0s.unwrap_or_else(|| vec![resolved.alpha0]);
    let p_hashes = p_hashes.unwrap_or_else(|| vec![resolved.p_hash]);
    let alpha1s = alpha1s.unwrap_or_else(|| vec![resolved.alpha1]);

    #[derive(Clone)]
    struct Job {
        alpha0: f64,
        p_hash: f64,
        alpha1: f64,
        seed: u64,
    }
    let mut jobs = Vec::new();
    for &alpha0 in &alpha0s {
        for &p_hash in &p_hashes {
            for &alpha1 in &alpha1s {
                for s in 0..grids.seeds {
                    jobs.push(Job {
                        alpha0,
                        p_hash,
                        alpha1,
                        seed: resolved.seed + s as u64,
                    });
                }
            }
        }
    }

    let run_one = |job: &Job| -> Result<EvalReport, String> {
        let mut r = resolved.clone();
        r.alpha0 = job.alpha0;
        r.p_hash = job.p_hash;
        r.alpha1 = job.alpha1;
        r.seed = job.seed;
        let params = r.params_for(&corpus).map_err(|e| e.message())?;
        let pipeline = Pipeline {
            resolved: r,
            corpus: corpus.clone(),
            params,
        };
        let init = pipeline.initial_state().map_err(|e| e.message())?;
        let (_, state) = pipeline.run(init, None).map_err(|e| e.message())?;
        eval::evaluate(&state, &corpus).map_err(|e| e.to_string())
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(grids.jobs.unwrap_or(0))
        .build()
        .map_err(runtime_err)?;
    let results: Vec<Result<EvalReport, String>> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter().map(run_one).collect()
    });

    let mut tsv = format!(
        "model\talpha0\talpha1\tp_hash\trho\tseed\tstatus\t{}\n",
        EvalReport::tsv_header()
    );
    let blank_cols = EvalReport::tsv_header().split('\t').count();
    for (job, result) in jobs.iter().zip(&results) {
        let lead = format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            resolved.model, job.alpha0, job.alpha1, job.p_hash, resolved.rho, job.seed
        );
        match result {
            Ok(report) => {
                let _ = writeln!(tsv, "{lead}\tok\t{}", report.tsv_row());
            }
            Err(msg) => {
                let _ = writeln!(
                    tsv,
                    "{lead}\terror: {}\t{}",
                    msg.replace(['\t', '\n'], " "),
                    vec![""; blank_cols].join("\t")
                );
            }
        }
    }
    ensure_out(&resolved.out)?;
    let mut manifest = manifest_base("sweep", &resolved);
    manifest["sweep"] = serde_json::json!({
        "alpha0_grid": alpha0s,
        "p_hash_grid": p_hashes,
        "alpha1_grid": alpha1s,
        "seeds": grids.seeds,
    });
    write_manifest(&resolved.out, &manifest)?;
    write_file(&resolved.out, "sweep.tsv", &tsv)?;
    let failures = results.iter().filter(|r| r.is_err()).count();
    println!(
        "swept {} runs ({} failed) -> {}",
        jobs.len(),
        failures,
        resolved.out.join("sweep.tsv").display()
    );
    Ok(())
}

pub fn cmd_generate(
    common: &CommonOpts,
    n_utterances: usize,
    p_dollar_raw: &str,
    alphabet: Option<&str>,
) -> Result<(), CliError> {
    let resolved = common.resolve()?;
    let p_dollar = if p_dollar_raw.eq_ignore_ascii_case("prior") {
        PDollar::SampleFromPrior
    } else {
        let v: f64 = p_dollar_raw
            .parse()
            .map_err(|e| config_err(anyhow!("cannot parse p_dollar {p_dollar_raw:?}: {e}")))?;
        PDollar::Fixed(v)
    };
    // The phoneme distribution comes from an explicit alphabet, or from a
    // reference corpus when one is supplied.
    let phoneme_dist = if let Some(chars) = alphabet {
        PhonemeDist::uniform(chars.as_bytes()).map_err(config_err)?
    } else if resolved.corpus.is_some() {
        let reference = resolved.load_corpus()?;
        resolved.dist_for(&reference)?
    } else {
        PhonemeDist::uniform(b"abcdefghijklmnopqrstuvwxyz").expect("nonempty")
    };
    let gen_config = GenConfig {
        params: ModelParams {
            alpha0: resolved.alpha0,
            alpha1: resolved.alpha1,
            p_hash: resolved.p_hash,
            rho: resolved.rho,
            phoneme_dist,
        },
        n_utterances,
        p_dollar,
        seed: resolved.seed,
    };
    let corpus = match resolved.model() {
        Model::Unigram => gen_unigram(&gen_config),
        Model::Bigram => gen_bigram(&gen_config),
    }
    .map_err(config_err)?;
    ensure_out(&resolved.out)?;
    let mut manifest = manifest_base("generate", &resolved);
    manifest["generate"] = serde_json::json!({
        "n_utterances": n_utterances,
        "p_dollar": p_dollar_raw,
        "alphabet": alphabet,
    });
    write_manifest(&resolved.out, &manifest)?;
    let text = corpus.render_gold().expect("generated corpora carry gold");
    write_file(&resolved.out, "corpus.txt", &text)?;
    let stats = corpus.stats().expect("generated corpora carry gold");
    println!(
        "generated {} utterances ({} tokens, {} types) -> {}",
        corpus.len(),
        stats.tokens,
        stats.types,
        resolved.out.join("corpus.txt").display()
    );
    Ok(())
}

pub fn cmd_oracle(common: &CommonOpts) -> Result<(), CliError> {
    let pipeline = Pipeline::prepare(common)?;
    let exact = exact_posterior(&pipeline.corpus, &pipeline.params, pipeline.resolved.model())
        .map_err(config_err)?;
    let exact_marginals = exact.marginals();
    let sites = flat_sites(&pipeline.corpus);

    // Gibbs empirical marginals: annealed burn-in, then gamma = 1 sweeps.
    let schedule = pipeline.resolved.schedule();
    let init = pipeline.initial_state()?;
    let mut sampler = GibbsSampler::new(
        &pipeline.corpus,
        pipeline.params.clone(),
        pipeline.resolved.model(),
        init,
        pipeline.resolved.seed,
    )
    .map_err(config_err)?
    .with_visit_order(pipeline.resolved.visit());
    for it in 0..schedule.burn_in {
        sampler.sweep(schedule.gamma(it), None).map_err(runtime_err)?;
    }
    let mut hits = vec![0usize; sites.len()];
    for _ in 0..schedule.total_sampling {
        sampler.sweep(1.0, None).map_err(runtime_err)?;
        for (i, &(u, p)) in sites.iter().enumerate() {
            if sampler.state().get(u, p) {
                hits[i] += 1;
            }
        }
    }

    let denom = schedule.total_sampling.max(1) as f64;
    let mut tsv = String::from("utterance\tposition\texact\tgibbs\tabs_dev\n");
    let mut max_dev = 0.0f64;
    for (i, &(u, p)) in sites.iter().enumerate() {
        let gibbs = hits[i] as f64 / denom;
        let dev = (gibbs - exact_marginals[i]).abs();
        max_dev = max_dev.max(dev);
        let _ = writeln!(
            tsv,
            "{u}\t{p}\t{:.6}\t{:.6}\t{:.6}",
            exact_marginals[i], gibbs, dev
        );
    }
    ensure_out(&pipeline.resolved.out)?;
    let mut manifest = manifest_base("oracle", &pipeline.resolved);
    manifest["oracle"] = serde_json::json!({
        "positions": sites.len(),
        "max_abs_deviation": max_dev,
    });
    write_manifest(&pipeline.resolved.out, &manifest)?;
    write_file(&pipeline.resolved.out, "oracle.tsv", &tsv)?;
    println!(
        "exact vs Gibbs marginals over {} positions: max deviation {max_dev:.4} -> {}",
        sites.len(),
        pipeline.resolved.out.join("oracle.tsv").display()
    );
    Ok(())
}

pub fn cmd_stats(common: &CommonOpts, top: usize) -> Result<(), CliError> {
    let resolved = common.resolve()?;
    let corpus = resolved.load_corpus()?;
    let stats = corpus.stats().map_err(config_err)?;
    let empirical = PhonemeDist::empirical(&corpus).map_err(config_err)?;
    ensure_out(&resolved.out)?;
    let mut manifest = manifest_base("stats", &resolved);
    manifest["stats"] = serde_json::to_value(&stats).expect("stats serialize");
    write_manifest(&resolved.out, &manifest)?;
    let mut stats_tsv = format!("{stats}\n");
    let _ = writeln!(stats_tsv, "alphabet_size\t{}", corpus.alphabet().len());
    write_file(&resolved.out, "stats.tsv", &stats_tsv)?;
    let mut dist_tsv = String::from("phoneme\tempirical_prob\n");
    for (ch, p) in empirical.to_map() {
        let _ = writeln!(dist_tsv, "{ch}\t{p:.6}");
    }
    write_file(&resolved.out, "phoneme_dist.tsv", &dist_tsv)?;
    let gold = corpus.gold_state().expect("stats checked gold");
    write_file(
        &resolved.out,
        "top_words.tsv",
        &top_words_tsv(&gold, &corpus, top),
    )?;
    println!("{stats}");
    println!("alphabet_size\t{}", corpus.alphabet().len());
    Ok(())
}

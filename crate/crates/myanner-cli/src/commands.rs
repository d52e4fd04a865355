//! Subcommand implementations: thin wrappers over the library.

use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use myanner::corpus::{
    evaluate, generate_synthetic_corpus, read_conll, read_token_lines, write_conll,
    LabeledSentence, Metrics, Scheme,
};
use myanner::model::{
    baseline_train, load_model, save_model, FeatureTemplate, FloatDtype, Gazetteer, ModelRef,
    NeuralTagger,
};
use myanner::syllable::segment_with_violations;
use myanner::train::{
    load_pretrained_embeddings, parse_config, train_loop, window_offsets, EpochStats, ModelChoice,
    TrainOutcome,
};
use myanner::{Error, Result};

use crate::io::{read_utf8, reader, writer};

/// Iterate the UTF-8 lines of a byte stream, reporting the absolute byte
/// offset of any invalid sequence.
fn for_each_utf8_line(
    mut input: Box<dyn BufRead>,
    mut f: impl FnMut(usize, &str) -> Result<()>,
) -> Result<()> {
    let mut buf = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    loop {
        buf.clear();
        let n = input.read_until(b'\n', &mut buf)?;
        if n == 0 {
            return Ok(());
        }
        line_no += 1;
        let end = if buf.last() == Some(&b'\n') { n - 1 } else { n };
        let mut slice = &buf[..end];
        if slice.last() == Some(&b'\r') {
            slice = &slice[..slice.len() - 1];
        }
        let text = std::str::from_utf8(slice).map_err(|e| {
            Error::Data(format!(
                "invalid UTF-8 at byte offset {}",
                offset + e.valid_up_to()
            ))
        })?;
        f(line_no, text)?;
        offset += n;
    }
}

pub fn segment(strict: bool, input: &str, output: &str) -> Result<()> {
    let input = reader(input)?;
    let mut out = writer(output)?;
    for_each_utf8_line(input, |line_no, line| {
        let (syllables, violations) = segment_with_violations(line);
        if strict && !violations.is_empty() {
            let v = &violations[0];
            return Err(Error::Data(format!(
                "line {line_no}: {} (scalar index {})",
                v.message, v.char_index
            )));
        }
        let mut first = true;
        for syl in &syllables {
            if !first {
                out.write_all(b" ")?;
            }
            out.write_all(syl.surface().as_bytes())?;
            first = false;
        }
        out.write_all(b"\n")?;
        Ok(())
    })?;
    out.flush()?;
    Ok(())
}

pub fn convert(from: &str, to: &str, input: &str, output: &str) -> Result<()> {
    let from = Scheme::from_str(from)?;
    let to = Scheme::from_str(to)?;
    let sentences = read_conll(reader(input)?)?;
    let converted: Vec<LabeledSentence> = sentences
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let labels = myanner::corpus::convert_scheme(&s.labels, from, to)
                .map_err(|e| Error::Data(format!("sentence {}: {e}", i + 1)))?;
            LabeledSentence::new(s.tokens, labels)
        })
        .collect::<Result<_>>()?;
    let mut out = writer(output)?;
    write_conll(&mut out, &converted)?;
    out.flush()?;
    Ok(())
}

fn final_line(outcome: &TrainOutcome) -> String {
    let best = outcome
        .history
        .iter()
        .find(|h| h.epoch == outcome.best_epoch);
    match best {
        Some(h) => format!(
            "best epoch {}: dev P={:.2} R={:.2} F1={:.2}",
            h.epoch,
            h.dev_precision * 100.0,
            h.dev_recall * 100.0,
            h.dev_f1 * 100.0
        ),
        None => "no epoch completed".to_string(),
    }
}

fn write_history(path: &str, history: &[EpochStats]) -> Result<()> {
    let mut out = writer(path)?;
    writeln!(out, "{}", EpochStats::CSV_HEADER)?;
    for row in history {
        writeln!(out, "{}", row.csv_row())?;
    }
    out.flush()?;
    Ok(())
}

pub fn train(
    config_path: &str,
    train_path: &str,
    dev_path: &str,
    embeddings_path: Option<&str>,
    out_path: &str,
) -> Result<()> {
    let mut cfg = parse_config(&read_utf8(config_path)?)?;
    if let Ok(seed) = std::env::var("MYANNER_SEED") {
        cfg.train.seed = seed
            .parse()
            .map_err(|_| Error::Config(format!("MYANNER_SEED {seed:?} is not an integer")))?;
    }
    let train_data = read_conll(reader(train_path)?)?;
    let dev_data = read_conll(reader(dev_path)?)?;
    if train_data.is_empty() || dev_data.is_empty() {
        return Err(Error::Data(
            "training and dev files must contain at least one sentence".to_string(),
        ));
    }

    let outcome = match cfg.model {
        ModelChoice::Neural => {
            let alphabets = myanner::corpus::build_alphabets(&train_data)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            let mut tagger = NeuralTagger::new(cfg.tagger.clone(), alphabets, &mut rng)?;
            if let Some(path) = embeddings_path {
                let vocab = tagger.alphabets.syllables.clone();
                let (table, report) =
                    load_pretrained_embeddings(reader(path)?, &vocab, cfg.tagger.d_syl, &mut rng)?;
                tagger.set_syllable_embeddings(table)?;
                eprintln!(
                    "embeddings: {} loaded, {} randomly initialized",
                    report.loaded, report.missing
                );
            }
            let outcome = train_loop(&mut tagger, &train_data, &dev_data, &cfg.train)?;
            let mut out = writer(out_path)?;
            save_model(ModelRef::Neural(&tagger), &mut out, FloatDtype::F64)?;
            out.flush()?;
            outcome
        }
        ModelChoice::SparseCrf => {
            if embeddings_path.is_some() {
                return Err(Error::Config(
                    "pretrained embeddings only apply to the neural model".to_string(),
                ));
            }
            let mut gazetteers = Vec::new();
            for path in &cfg.gazetteers {
                let name = std::path::Path::new(path)
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("gazetteer")
                    .to_string();
                gazetteers.push(Gazetteer::load(name, reader(path)?)?);
            }
            let template = FeatureTemplate {
                offsets: window_offsets(cfg.feature_window),
                gazetteers,
            };
            let (model, outcome) = baseline_train(
                &train_data,
                &dev_data,
                template,
                cfg.feature_cutoff,
                cfg.tagger.decode_mask,
                cfg.l2_c,
                &cfg.train,
            )?;
            let mut out = writer(out_path)?;
            save_model(ModelRef::Sparse(&model), &mut out, FloatDtype::F64)?;
            out.flush()?;
            outcome
        }
    };

    if out_path != "-" {
        write_history(&format!("{out_path}.history.csv"), &outcome.history)?;
    }
    println!("{}", final_line(&outcome));
    Ok(())
}

fn write_tagged(
    out: &mut dyn Write,
    first: &mut bool,
    tokens: &[String],
    labels: &[String],
) -> Result<()> {
    if !*first {
        out.write_all(b"\n")?;
    }
    for (token, label) in tokens.iter().zip(labels) {
        out.write_all(token.as_bytes())?;
        out.write_all(b"\t")?;
        out.write_all(label.as_bytes())?;
        out.write_all(b"\n")?;
    }
    *first = false;
    Ok(())
}

pub fn tag(model_path: &str, pre_segmented: bool, input: &str, output: &str) -> Result<()> {
    let model = load_model(reader(model_path)?)?;
    let mut out = writer(output)?;
    let mut first = true;
    if pre_segmented {
        let sentences = read_token_lines(reader(input)?)?;
        for tokens in sentences {
            let labels = model.predict(&tokens);
            write_tagged(&mut out, &mut first, &tokens, &labels)?;
        }
    } else {
        for_each_utf8_line(reader(input)?, |line_no, line| {
            let (syllables, _) = segment_with_violations(line);
            if syllables.is_empty() {
                eprintln!("myanner: line {line_no}: empty sentence skipped");
                return Ok(());
            }
            let tokens: Vec<String> =
                syllables.iter().map(|s| s.surface().to_string()).collect();
            let labels = model.predict(&tokens);
            write_tagged(&mut out, &mut first, &tokens, &labels)
        })?;
    }
    out.flush()?;
    Ok(())
}

fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

fn print_metrics(metrics: &Metrics, macro_avg: bool) {
    for (ne_type, counts) in &metrics.per_type {
        println!(
            "{ne_type}\t{}\t{}\t{}",
            percent(counts.precision()),
            percent(counts.recall()),
            percent(counts.f1())
        );
    }
    println!(
        "MICRO\t{}\t{}\t{}",
        percent(metrics.micro.precision()),
        percent(metrics.micro.recall()),
        percent(metrics.micro.f1())
    );
    if macro_avg {
        let n = metrics.per_type.len().max(1) as f64;
        let p = metrics.per_type.values().map(|c| c.precision()).sum::<f64>() / n;
        let r = metrics.per_type.values().map(|c| c.recall()).sum::<f64>() / n;
        println!(
            "MACRO\t{}\t{}\t{}",
            percent(p),
            percent(r),
            percent(metrics.macro_f1())
        );
    }
}

pub fn eval(gold_path: &str, pred_path: &str, macro_avg: bool) -> Result<()> {
    let gold = read_conll(reader(gold_path)?)?;
    let pred = read_conll(reader(pred_path)?)?;
    let pred_labels: Vec<Vec<String>> = pred.into_iter().map(|s| s.labels).collect();
    let metrics = evaluate(&gold, &pred_labels)?;
    print_metrics(&metrics, macro_avg);
    Ok(())
}

pub fn synth(seed: u64, n: usize, out_path: &str) -> Result<()> {
    if n == 0 {
        return Err(Error::Data("need at least one sentence".to_string()));
    }
    let corpus = generate_synthetic_corpus(seed, n);
    let mut out = writer(out_path)?;
    write_conll(&mut out, &corpus)?;
    out.flush()?;
    Ok(())
}

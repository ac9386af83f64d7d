use std::fmt::Write as _;
use std::str::FromStr;

use super::network::{CnnModel, CnnParams};
use super::{Activation, CnnConfig, NeuralError, Variant};
use crate::corpus::{EmbeddingTable, Vocabulary};

const MAGIC: &str = "slotfill-cnn";
const VERSION: &str = "v1";

fn write_tensor(out: &mut String, name: &str, values: &[f64]) {
    let _ = writeln!(out, "{name}\t{}", values.len());
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v:e}");
    }
    out.push('\n');
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    total: usize,
}

impl<'a> Reader<'a> {
    fn err(line: usize, message: impl Into<String>) -> NeuralError {
        NeuralError::Parse {
            line: line + 1,
            message: message.into(),
        }
    }

    fn line(&mut self) -> Result<(usize, &'a str), NeuralError> {
        self.lines.next().ok_or_else(|| Self::err(self.total, "truncated file"))
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str), NeuralError> {
        let (i, l) = self.line()?;
        match l.split_once('\t') {
            Some((k, v)) if k == key => Ok((i, v)),
            _ => Err(Self::err(i, format!("expected `{key}`"))),
        }
    }

    fn parsed<T: FromStr>(&mut self, key: &str) -> Result<T, NeuralError> {
        let (i, v) = self.field(key)?;
        v.parse().map_err(|_| Self::err(i, format!("bad value for `{key}`")))
    }

    fn tensor(&mut self, key: &str, expected: usize) -> Result<Vec<f64>, NeuralError> {
        let n: usize = self.parsed(key)?;
        let (i, l) = self.line()?;
        if n != expected {
            return Err(Self::err(i, format!("`{key}` has {n} values, expected {expected}")));
        }
        let values = l
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| Self::err(i, format!("bad number `{s}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != n {
            return Err(Self::err(i, format!("`{key}` lists {} values, header says {n}", values.len())));
        }
        Ok(values)
    }
}

impl CnnModel {
    /// Self-describing text form. Floats are written in shortest round-trip
    /// notation, so `from_text(to_text())` is bitwise exact.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = format!("{MAGIC}\t{VERSION}\n");
        let _ = writeln!(out, "slot\t{}", self.slot);
        let _ = writeln!(out, "variant\t{}", c.variant.as_str());
        let _ = writeln!(out, "n_filters\t{}", c.n_filters);
        let _ = writeln!(out, "width\t{}", c.width);
        let _ = writeln!(out, "k\t{}", c.k);
        let _ = writeln!(out, "hidden\t{}", c.hidden);
        let _ = writeln!(out, "dim\t{}", c.dim);
        let _ = writeln!(out, "learning_rate\t{:e}", c.learning_rate);
        let _ = writeln!(out, "epochs\t{}", c.epochs);
        let _ = writeln!(out, "batch_size\t{}", c.batch_size);
        let _ = writeln!(out, "seed\t{}", c.seed);
        let _ = writeln!(out, "finetune_embeddings\t{}", c.finetune_embeddings);
        let _ = writeln!(out, "activation\t{}", c.activation.as_str());
        let _ = writeln!(out, "vocab_hash\t{}", self.vocab.content_hash());
        let _ = writeln!(out, "vocab\t{}", self.vocab.len());
        for t in self.vocab.tokens() {
            out.push_str(t);
            out.push('\n');
        }
        let p = &self.params;
        write_tensor(&mut out, "embeddings", p.embeddings.as_slice());
        write_tensor(&mut out, "filters", &p.filters);
        write_tensor(&mut out, "conv_bias", &p.conv_bias);
        write_tensor(&mut out, "hidden_w", &p.hidden_w);
        write_tensor(&mut out, "hidden_b", &p.hidden_b);
        write_tensor(&mut out, "out_w", &p.out_w);
        write_tensor(&mut out, "out_b", &p.out_b);
        out
    }

    pub fn from_text(text: &str) -> Result<Self, NeuralError> {
        let mut r = Reader {
            lines: text.lines().enumerate(),
            total: text.lines().count(),
        };
        let (i, version) = r.field(MAGIC)?;
        if version != VERSION {
            return Err(Reader::err(i, format!("unsupported version `{version}`")));
        }
        let slot = r.field("slot")?.1.to_string();
        let (i, v) = r.field("variant")?;
        let variant = Variant::parse(v).ok_or_else(|| Reader::err(i, format!("unknown variant `{v}`")))?;
        let n_filters = r.parsed("n_filters")?;
        let width = r.parsed("width")?;
        let k = r.parsed("k")?;
        let hidden = r.parsed("hidden")?;
        let dim = r.parsed("dim")?;
        let learning_rate = r.parsed("learning_rate")?;
        let epochs = r.parsed("epochs")?;
        let batch_size = r.parsed("batch_size")?;
        let seed = r.parsed("seed")?;
        let finetune_embeddings = r.parsed("finetune_embeddings")?;
        let (i, a) = r.field("activation")?;
        let activation = Activation::parse(a).ok_or_else(|| Reader::err(i, format!("unknown activation `{a}`")))?;
        let config = CnnConfig {
            variant,
            n_filters,
            width,
            k,
            hidden,
            dim,
            learning_rate,
            epochs,
            batch_size,
            seed,
            finetune_embeddings,
            activation,
        };
        config
            .validate()
            .map_err(|e| Reader::err(i, e.to_string()))?;

        let stored = r.field("vocab_hash")?.1.to_string();
        let n_tokens: usize = r.parsed("vocab")?;
        let mut tokens = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            tokens.push(r.line()?.1);
        }
        let vocab = Vocabulary::from_tokens(&tokens);
        let computed = vocab.content_hash();
        if vocab.len() != n_tokens || computed != stored {
            return Err(NeuralError::VocabHashMismatch { stored, computed });
        }

        let shape = CnnParams::zeros(&config, EmbeddingTable::from_raw(dim, Vec::new()));
        let embeddings = EmbeddingTable::from_raw(dim, r.tensor("embeddings", n_tokens * dim)?);
        let params = CnnParams {
            embeddings,
            filters: r.tensor("filters", shape.filters.len())?,
            conv_bias: r.tensor("conv_bias", shape.conv_bias.len())?,
            hidden_w: r.tensor("hidden_w", shape.hidden_w.len())?,
            hidden_b: r.tensor("hidden_b", shape.hidden_b.len())?,
            out_w: r.tensor("out_w", shape.out_w.len())?,
            out_b: r.tensor("out_b", shape.out_b.len())?,
        };
        Ok(CnnModel {
            slot,
            config,
            vocab,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Genre, Label, RelationInstance, Span, Split};

    fn model(variant: Variant) -> CnnModel {
        let toks: Vec<String> = "A , the founder of B".split(' ').map(String::from).collect();
        let inst = RelationInstance::new("org:founded_by", Label::Positive, Genre::News, Split::Train, toks, Span::new(0, 1), Span::new(5, 6))
            .unwrap();
        let vocab = Vocabulary::from_instances([&inst]);
        let cfg = CnnConfig { variant, n_filters: 3, hidden: 4, dim: 5, ..Default::default() };
        let emb = EmbeddingTable::random(&vocab, 5, 3);
        CnnModel::init("org:founded_by", cfg, vocab, emb).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        for v in [Variant::Contextwise, Variant::Piecewise, Variant::PiecewiseExt] {
            let m = model(v);
            let text = m.to_text();
            let back = CnnModel::from_text(&text).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn vocabulary_tampering_is_detected() {
        let text = model(Variant::Contextwise).to_text().replace("\nfounder\n", "\nfunder\n");
        assert!(matches!(CnnModel::from_text(&text), Err(NeuralError::VocabHashMismatch { .. })));
    }

    #[test]
    fn malformed_files() {
        let text = model(Variant::Piecewise).to_text();
        let truncated: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(matches!(CnnModel::from_text(&truncated), Err(NeuralError::Parse { .. })));
        let bad = text.replace("variant\tpiecewise", "variant\tdeep");
        assert_eq!(
            CnnModel::from_text(&bad).unwrap_err(),
            NeuralError::Parse { line: 3, message: "unknown variant `deep`".into() }
        );
        assert!(CnnModel::from_text("slotfill-cnn\tv9\n").is_err());
    }
}

use std::collections::HashMap;

use log::warn;

use super::graph::{Chw, ConnectedParams, ConvParams, LayerKind, NetworkGraph, PoolParams};
use super::FrontendError;
use crate::tensor::Activation;

/// Keys of `[net]` that only matter for training; accepted silently.
const NET_IGNORED: &[&str] = &[
    "batch",
    "subdivisions",
    "momentum",
    "decay",
    "learning_rate",
    "burn_in",
    "max_batches",
    "policy",
    "steps",
    "scales",
    "angle",
    "saturation",
    "exposure",
    "hue",
    "max_crop",
    "min_crop",
    "power",
    "gamma",
];

struct Section {
    name: String,
    line: usize,
    entries: Vec<(String, String, usize)>,
}

struct Options<'a> {
    section: &'a Section,
    used: Vec<&'static str>,
    values: HashMap<&'a str, (&'a str, usize)>,
}

impl<'a> Options<'a> {
    fn new(section: &'a Section) -> Self {
        let values = section
            .entries
            .iter()
            .map(|(k, v, line)| (k.as_str(), (v.as_str(), *line)))
            .collect();
        Self { section, used: Vec::new(), values }
    }

    fn invalid(&self, key: &str, value: &str, line: usize) -> FrontendError {
        FrontendError::InvalidValue {
            section: self.section.name.clone(),
            key: key.to_string(),
            value: value.to_string(),
            line,
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<(&'a str, usize)> {
        self.used.push(key);
        self.values.get(key).copied()
    }

    fn int(&mut self, key: &'static str, default: Option<usize>) -> Result<usize, FrontendError> {
        match self.raw(key) {
            Some((v, line)) => v.parse().map_err(|_| self.invalid(key, v, line)),
            None => default.ok_or_else(|| FrontendError::MissingRequiredKey {
                section: self.section.name.clone(),
                key: key.to_string(),
                line: self.section.line,
            }),
        }
    }

    fn positive(&mut self, key: &'static str, default: Option<usize>) -> Result<usize, FrontendError> {
        let v = self.int(key, default)?;
        if v == 0 {
            let line = self.values.get(key).map_or(self.section.line, |(_, l)| *l);
            return Err(self.invalid(key, "0", line));
        }
        Ok(v)
    }

    fn flag(&mut self, key: &'static str) -> Result<bool, FrontendError> {
        Ok(self.int(key, Some(0))? != 0)
    }

    fn activation(&mut self) -> Result<Activation, FrontendError> {
        match self.raw("activation") {
            Some((v, line)) => v.parse().map_err(|_| self.invalid("activation", v, line)),
            None => Ok(Activation::Logistic),
        }
    }

    fn warn_unused(&self, ignored: &[&str]) {
        for (key, _, line) in &self.section.entries {
            if !self.used.contains(&key.as_str()) && !ignored.contains(&key.as_str()) {
                warn!("line {line}: ignoring unknown key '{key}' in [{}]", self.section.name);
            }
        }
    }
}

fn split_sections(text: &str) -> Result<Vec<Section>, FrontendError> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| FrontendError::MalformedLine { line, text: trimmed.to_string() })?;
            sections.push(Section { name: name.trim().to_string(), line, entries: Vec::new() });
            continue;
        }
        let Some(current) = sections.last_mut() else {
            return Err(FrontendError::MissingNetHeader { line });
        };
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| FrontendError::MalformedLine { line, text: trimmed.to_string() })?;
        current.entries.push((key.trim().to_string(), value.trim().to_string(), line));
    }
    Ok(sections)
}

fn parse_conv(opts: &mut Options) -> Result<ConvParams, FrontendError> {
    let filters = opts.positive("filters", None)?;
    let size = opts.positive("size", None)?;
    let stride = opts.positive("stride", Some(1))?;
    // `pad=1` means "same" padding of size/2 and wins over an explicit `padding`.
    let padding = opts.int("padding", Some(0))?;
    let pad = if opts.flag("pad")? { size / 2 } else { padding };
    Ok(ConvParams {
        filters,
        size,
        stride,
        pad,
        activation: opts.activation()?,
        batch_normalize: opts.flag("batch_normalize")?,
    })
}

fn parse_layer(section: &Section) -> Result<LayerKind, FrontendError> {
    let mut opts = Options::new(section);
    let kind = match section.name.as_str() {
        "convolutional" | "conv" => LayerKind::Convolutional(parse_conv(&mut opts)?),
        "deconvolutional" | "deconv" => LayerKind::Deconvolutional(parse_conv(&mut opts)?),
        "maxpool" | "max" => {
            let stride = opts.positive("stride", Some(1))?;
            let size = opts.positive("size", Some(stride))?;
            let pad = opts.int("padding", Some(size - 1))?;
            LayerKind::Maxpool(PoolParams { size, stride, pad })
        }
        "connected" | "conn" => LayerKind::Connected(ConnectedParams {
            outputs: opts.positive("output", None)?,
            activation: opts.activation()?,
            batch_normalize: opts.flag("batch_normalize")?,
        }),
        "softmax" | "soft" => LayerKind::Softmax,
        "avgpool" | "avg" => LayerKind::Avgpool,
        _ => {
            return Err(FrontendError::UnknownSection {
                name: section.name.clone(),
                line: section.line,
            })
        }
    };
    opts.warn_unused(&["groups", "temperature"]);
    Ok(kind)
}

/// Parses Darknet `.cfg` text into a validated [`NetworkGraph`].
///
/// Unknown keys in known sections are logged and skipped; unknown sections
/// (including `route`, `shortcut` and `yolo`) are errors.
pub fn parse_cfg(source: &str) -> Result<NetworkGraph, FrontendError> {
    let sections = split_sections(source)?;
    let Some((net, layers)) = sections.split_first() else {
        return Err(FrontendError::EmptyConfig);
    };
    if net.name != "net" && net.name != "network" {
        return Err(FrontendError::MissingNetHeader { line: net.line });
    }
    let mut opts = Options::new(net);
    let input = Chw::new(
        opts.positive("channels", None)?,
        opts.positive("height", None)?,
        opts.positive("width", None)?,
    );
    opts.warn_unused(NET_IGNORED);

    let kinds = layers.iter().map(parse_layer).collect::<Result<Vec<_>, _>>()?;
    let lines: Vec<usize> = layers.iter().map(|s| s.line).collect();
    NetworkGraph::with_lines(input, kinds, &lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_same_padding() {
        let g = parse_cfg(
            "[net]\nchannels=1\nheight=4\nwidth=4\n[convolutional]\nfilters=2\nsize=3\nstride=1\npad=1\nactivation=leaky",
        )
        .unwrap();
        assert_eq!(g.input_dims(), Chw::new(1, 4, 4));
        assert_eq!(g.layers().len(), 1);
        assert_eq!(g.layers()[0].out_dims, Chw::new(2, 4, 4));
        match g.layers()[0].kind {
            LayerKind::Convolutional(p) => {
                assert_eq!(p.activation, Activation::Leaky);
                assert_eq!(p.pad, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(parse_cfg(""), Err(FrontendError::EmptyConfig));
        assert_eq!(parse_cfg("# only a comment\n\n"), Err(FrontendError::EmptyConfig));
    }

    #[test]
    fn non_integral_output() {
        let err = parse_cfg(
            "[net]\nchannels=1\nheight=2\nwidth=2\n[convolutional]\nfilters=1\nsize=3\nstride=2\npad=0\nactivation=linear",
        )
        .unwrap_err();
        assert_eq!(err, FrontendError::NonIntegralOutputDim { layer_index: 0, line: 5 });
    }

    #[test]
    fn header_and_section_errors() {
        assert_eq!(
            parse_cfg("[convolutional]\nfilters=1\nsize=1"),
            Err(FrontendError::MissingNetHeader { line: 1 })
        );
        assert_eq!(parse_cfg("channels=3\n"), Err(FrontendError::MissingNetHeader { line: 1 }));
        assert!(matches!(
            parse_cfg("[net]\nchannels=1\nheight=1\nwidth=1\n[route]\nlayers=-1"),
            Err(FrontendError::UnknownSection { ref name, line: 5 }) if name == "route"
        ));
        assert!(matches!(
            parse_cfg("[net]\nchannels=1\nheight=1\n[softmax]"),
            Err(FrontendError::MissingRequiredKey { ref key, .. }) if key == "width"
        ));
        assert_eq!(parse_cfg("[net]\nchannels=1\nheight=1\nwidth=1"), Err(FrontendError::NoLayers));
        assert!(matches!(
            parse_cfg("[net]\nchannels=1\nheight=1\nwidth=1\n[convolutional]\nfilters=x\nsize=1"),
            Err(FrontendError::InvalidValue { .. })
        ));
        assert!(matches!(
            parse_cfg("[net]\nchannels=1\nheight=1\nwidth=1\n[softmax]\ngarbage"),
            Err(FrontendError::MalformedLine { line: 6, .. })
        ));
    }

    #[test]
    fn darknet_defaults() {
        let g = parse_cfg(
            "[net]\nbatch=64\nmomentum=0.9\nchannels=3\nheight=8\nwidth=8\n\
             [convolutional]\nfilters=4\nsize=3\nsome_new_key=7\n\
             [maxpool]\nsize=2\nstride=2\n[avgpool]\n[connected]\noutput=5\n[softmax]",
        )
        .unwrap();
        let dims: Vec<_> = g.layers().iter().map(|l| l.out_dims).collect();
        assert_eq!(
            dims,
            vec![
                Chw::new(4, 6, 6),
                Chw::new(4, 3, 3),
                Chw::new(4, 1, 1),
                Chw::new(5, 1, 1),
                Chw::new(5, 1, 1)
            ]
        );
        match g.layers()[0].kind {
            LayerKind::Convolutional(p) => {
                assert_eq!((p.stride, p.pad, p.activation), (1, 0, Activation::Logistic))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn to_cfg_round_trips() {
        let g = parse_cfg(
            "[net]\nchannels=2\nheight=5\nwidth=5\n[deconvolutional]\nfilters=3\nsize=4\nstride=2\npadding=1\n\
             batch_normalize=1\nactivation=relu\n[maxpool]\nsize=3\nstride=2\n[connected]\noutput=7\nactivation=linear",
        )
        .unwrap();
        assert_eq!(g.layers()[0].out_dims, Chw::new(3, 10, 10));
        let again = parse_cfg(&g.to_cfg()).unwrap();
        assert_eq!(again.layers().len(), g.layers().len());
        for (a, b) in again.layers().iter().zip(g.layers()) {
            assert_eq!((a.kind, a.in_dims, a.out_dims), (b.kind, b.in_dims, b.out_dims));
        }
    }
}

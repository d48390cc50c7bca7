//! ECG input, R-peak extraction and a synthetic beat generator.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{ecg_template, ConstraintGraph, GapTable, VertexId, Wave};
use crate::solver::{solve, Segmentation};

#[derive(Clone, Debug, PartialEq)]
pub struct EcgSignal {
    pub samples: Vec<f64>,
    /// Sampling frequency in Hz.
    pub fs: f64,
    pub record_id: String,
}

impl EcgSignal {
    pub fn new(samples: Vec<f64>, fs: f64, record_id: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("signal is empty"));
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::invalid(format!("sampling frequency must be positive, got {fs}")));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("sample {} is not finite", i + 1)));
        }
        Ok(EcgSignal {
            samples,
            fs,
            record_id: record_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Strictly increasing 1-based sample indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct RPeakList(Vec<usize>);

impl RPeakList {
    pub fn new(peaks: Vec<usize>) -> Result<Self> {
        if peaks.first() == Some(&0) {
            return Err(Error::invalid("peak indices start at 1"));
        }
        if peaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("peak indices must be strictly increasing"));
        }
        Ok(RPeakList(peaks))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|p| format!("{p}\n")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalFormat {
    /// Header row, then `index,amplitude[,...]` rows; extra columns are ignored.
    Csv,
    /// One amplitude per line.
    Plain,
}

impl SignalFormat {
    /// `.csv` files are CSV, anything else is plain.
    pub fn from_path(path: &Path) -> SignalFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => SignalFormat::Csv,
            _ => SignalFormat::Plain,
        }
    }
}

fn parse_amplitude(field: &str, line: usize) -> Result<f64> {
    let x: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("expected a number, found `{}`", field.trim())))?;
    if !x.is_finite() {
        return Err(Error::parse(line, "amplitude is not finite"));
    }
    Ok(x)
}

/// Parses samples without any filtering or resampling.
pub fn parse_signal(text: &str, format: SignalFormat, fs: f64, record_id: &str) -> Result<EcgSignal> {
    let mut samples = Vec::new();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match format {
        SignalFormat::Plain => {
            for (i, line) in lines {
                samples.push(parse_amplitude(line, i + 1)?);
            }
        }
        SignalFormat::Csv => {
            lines.next(); // header
            let mut last_idx: Option<f64> = None;
            for (i, line) in lines {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() < 2 {
                    return Err(Error::parse(i + 1, "expected an index and an amplitude column"));
                }
                let idx: f64 = fields[0]
                    .trim()
                    .trim_matches('\'')
                    .parse()
                    .map_err(|_| Error::parse(i + 1, format!("bad index `{}`", fields[0].trim())))?;
                if last_idx.is_some_and(|l| idx <= l) {
                    return Err(Error::parse(i + 1, "index column must be increasing"));
                }
                last_idx = Some(idx);
                samples.push(parse_amplitude(fields[1], i + 1)?);
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::invalid(format!("record `{record_id}` has no samples")));
    }
    EcgSignal::new(samples, fs, record_id)
}

/// Reads a signal file; the record id is the file stem.
pub fn load_signal(path: &Path, format: SignalFormat, fs: f64) -> Result<EcgSignal> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_signal(&text, format, fs, &id)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub peaks: RPeakList,
    pub segmentation: Segmentation,
}

/// Segments the signal and reports one peak per maximal run of samples in
/// the state named `R`.
pub fn detect_rpeaks(signal: &EcgSignal, graph: &ConstraintGraph) -> Result<Detection> {
    let r = graph
        .vertex_by_name("R")
        .ok_or_else(|| Error::invalid("graph has no state named `R`"))?
        .id;
    let segmentation = solve(&signal.samples, graph)?;
    let peaks = rpeaks_from_segmentation(&signal.samples, &segmentation, r);
    Ok(Detection { peaks, segmentation })
}

/// Position of the largest raw sample inside each run of `r` segments, the
/// earliest one on ties.
pub fn rpeaks_from_segmentation(samples: &[f64], seg: &Segmentation, r: VertexId) -> RPeakList {
    let mut peaks = Vec::new();
    let mut run: Option<(usize, usize)> = None;
    let flush = |run: (usize, usize), peaks: &mut Vec<usize>| {
        let (start, end) = run;
        let mut best = start;
        for i in start..=end {
            if samples[i - 1] > samples[best - 1] {
                best = i;
            }
        }
        peaks.push(best);
    };
    for s in &seg.segments {
        if s.state == r {
            run = Some(match run {
                Some((start, _)) => (start, s.end),
                None => (s.start, s.end),
            });
        } else if let Some(done) = run.take() {
            flush(done, &mut peaks);
        }
    }
    if let Some(done) = run {
        flush(done, &mut peaks);
    }
    RPeakList(peaks)
}

/// Wave amplitudes in mV relative to a zero baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeatShape {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub s: f64,
    pub t: f64,
}

impl Default for BeatShape {
    fn default() -> Self {
        BeatShape {
            p: 0.15,
            q: -0.1,
            r: 1.0,
            s: -0.25,
            t: 0.3,
        }
    }
}

/// Height of the R plateau's shoulders relative to its apex.
const R_SHOULDER: f64 = 0.7;

// (amplitude selector, duration in ms); `None` is baseline.
const BEAT_LAYOUT: [(Option<Wave>, f64); 9] = [
    (None, 100.0),
    (Some(Wave::P), 80.0),
    (None, 60.0),
    (Some(Wave::Q), 25.0),
    (Some(Wave::R), 30.0),
    (Some(Wave::S), 25.0),
    (None, 100.0),
    (Some(Wave::T), 150.0),
    (None, 230.0),
];

impl BeatShape {
    pub fn amplitude(&self, wave: Wave) -> f64 {
        match wave {
            Wave::P => self.p,
            Wave::Q => self.q,
            Wave::R => self.r,
            Wave::S => self.s,
            Wave::T => self.t,
        }
    }

    /// A five-wave template whose gaps are half of each wave's smallest
    /// excursion from the baseline. Synthetic records begin and end on the
    /// baseline before the P wave, so that is the only start and end state.
    pub fn matched_template(&self, penalty: f64) -> Result<ConstraintGraph> {
        let mut gaps = GapTable::uniform(0.0);
        for w in Wave::ALL {
            let excursion = if w == Wave::R { R_SHOULDER * self.r } else { self.amplitude(w) };
            gaps = gaps.with(w, 0.5 * excursion.abs());
        }
        let mut graph = ecg_template(&Wave::ALL.into_iter().collect(), &gaps, penalty)?;
        let b1 = graph.vertices[0].id;
        graph.start_states = vec![b1];
        graph.end_states = vec![b1];
        Ok(graph)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_beats: usize,
    pub fs: f64,
    pub shape: BeatShape,
    /// Standard deviation of additive Gaussian noise, in mV.
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_beats: 3,
            fs: 360.0,
            shape: BeatShape::default(),
            noise_sd: 0.0,
            seed: 0,
        }
    }
}

/// Generates piecewise-constant beats of about 800 ms whose R wave is a narrow
/// triangle, and returns the signal with the apex position of every beat.
///
/// ```
/// use gccd::ecg::{synth_ecg, SynthConfig};
/// let (signal, truth) = synth_ecg(&SynthConfig::default()).unwrap();
/// assert_eq!(signal.len() % 3, 0);
/// assert_eq!(truth.len(), 3);
/// ```
pub fn synth_ecg(cfg: &SynthConfig) -> Result<(EcgSignal, RPeakList)> {
    if cfg.n_beats == 0 {
        return Err(Error::invalid("need at least one beat"));
    }
    if !(cfg.fs.is_finite() && cfg.fs > 0.0) {
        return Err(Error::invalid(format!("sampling frequency must be positive, got {}", cfg.fs)));
    }
    if !(cfg.noise_sd.is_finite() && cfg.noise_sd >= 0.0) {
        return Err(Error::invalid(format!("noise level must be non-negative, got {}", cfg.noise_sd)));
    }
    let widths: Vec<usize> = BEAT_LAYOUT
        .iter()
        .map(|&(_, ms)| ((ms * cfg.fs / 1000.0).round() as usize).max(1))
        .collect();

    let mut beat = Vec::new();
    let mut apex = 0;
    for (&(wave, _), &w) in BEAT_LAYOUT.iter().zip(&widths) {
        match wave {
            None => beat.extend(std::iter::repeat_n(0.0, w)),
            Some(Wave::R) => {
                let centre = (w - 1) / 2;
                let half = (w as f64 / 2.0).max(1.0);
                apex = beat.len() + centre;
                for k in 0..w {
                    let drop = (1.0 - R_SHOULDER) * k.abs_diff(centre) as f64 / half;
                    beat.push(cfg.shape.r * (1.0 - drop));
                }
            }
            Some(other) => beat.extend(std::iter::repeat_n(cfg.shape.amplitude(other), w)),
        }
    }

    let mut samples = Vec::with_capacity(beat.len() * cfg.n_beats);
    let mut truth = Vec::with_capacity(cfg.n_beats);
    for b in 0..cfg.n_beats {
        truth.push(b * beat.len() + apex + 1);
        samples.extend_from_slice(&beat);
    }
    if cfg.noise_sd > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for x in &mut samples {
            *x += normal.sample(&mut rng);
        }
    }
    Ok((
        EcgSignal::new(samples, cfg.fs, format!("synth{}", cfg.seed))?,
        RPeakList(truth),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_graph;

    #[test]
    fn plain_and_csv() {
        let s = parse_signal("0.1\n-0.2\n\n0.3\n", SignalFormat::Plain, 360.0, "a").unwrap();
        assert_eq!(s.samples, vec![0.1, -0.2, 0.3]);
        let c = parse_signal("'sample #','MLII'\n0,0.5\n1,-0.5\n", SignalFormat::Csv, 360.0, "b").unwrap();
        assert_eq!(c.samples, vec![0.5, -0.5]);
        let two = parse_signal("s,MLII,V5\n0,0.5,9\n1,-0.5,9\n", SignalFormat::Csv, 360.0, "c").unwrap();
        assert_eq!(two.samples, vec![0.5, -0.5]);
    }

    #[test]
    fn parse_errors_carry_lines() {
        let e = parse_signal("1\n2\nx\n", SignalFormat::Plain, 360.0, "a").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
        let e = parse_signal("h\n0,1\n0,2\n", SignalFormat::Csv, 360.0, "a").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
        let e = parse_signal("h\n0\n", SignalFormat::Csv, 360.0, "a").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        assert!(matches!(
            parse_signal("", SignalFormat::Plain, 360.0, "a"),
            Err(Error::InvalidArgument(_))
        ));
        assert!(parse_signal("1", SignalFormat::Plain, 0.0, "a").is_err());
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(SignalFormat::from_path(Path::new("x/100.CSV")), SignalFormat::Csv);
        assert_eq!(SignalFormat::from_path(Path::new("100.txt")), SignalFormat::Plain);
    }

    #[test]
    fn peaks_take_argmax_of_merged_runs() {
        let g = parse_graph("state B\nstate R\nedge B R up gap=1 penalty=1\nedge R B down gap=1 penalty=1\nedge R R up gap=0 penalty=0").unwrap();
        let samples = [0.0, 5.0, 7.0, 7.0, 0.0, 6.0];
        let seg = Segmentation {
            segments: vec![
                crate::solver::Segment { start: 1, end: 1, state: VertexId(0), mean: 0.0 },
                crate::solver::Segment { start: 2, end: 2, state: VertexId(1), mean: 5.0 },
                crate::solver::Segment { start: 3, end: 4, state: VertexId(1), mean: 7.0 },
                crate::solver::Segment { start: 5, end: 5, state: VertexId(0), mean: 0.0 },
                crate::solver::Segment { start: 6, end: 6, state: VertexId(1), mean: 6.0 },
            ],
            changes: vec![],
            total_cost: 0.0,
        };
        let r = g.vertex_by_name("R").unwrap().id;
        assert_eq!(rpeaks_from_segmentation(&samples, &seg, r).as_slice(), &[3, 6]);
    }

    #[test]
    fn detect_needs_r_state() {
        let g = parse_graph("state A").unwrap();
        let s = EcgSignal::new(vec![1.0], 360.0, "x").unwrap();
        assert!(detect_rpeaks(&s, &g).is_err());
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = SynthConfig { noise_sd: 0.05, seed: 7, ..SynthConfig::default() };
        assert_eq!(synth_ecg(&cfg).unwrap(), synth_ecg(&cfg).unwrap());
        let other = SynthConfig { seed: 8, ..cfg };
        assert_ne!(synth_ecg(&cfg).unwrap().0, synth_ecg(&other).unwrap().0);
        assert!(synth_ecg(&SynthConfig { n_beats: 0, ..cfg }).is_err());
    }

    #[test]
    fn noiseless_beats_are_recovered() {
        let cfg = SynthConfig::default();
        let (signal, truth) = synth_ecg(&cfg).unwrap();
        let period = signal.len() / 3;
        for (i, &p) in truth.as_slice().iter().enumerate() {
            let beat = &signal.samples[i * period..(i + 1) * period];
            let max = beat.iter().copied().fold(f64::MIN, f64::max);
            assert_eq!(signal.samples[p - 1], max);
        }
        let graph = cfg.shape.matched_template(0.1).unwrap();
        let found = detect_rpeaks(&signal, &graph).unwrap();
        assert_eq!(found.peaks, truth);
    }

    #[test]
    fn rpeak_list_checks_order() {
        assert!(RPeakList::new(vec![1, 1]).is_err());
        assert!(RPeakList::new(vec![0]).is_err());
        assert_eq!(RPeakList::new(vec![2, 9]).unwrap().to_text(), "2\n9\n");
    }
}

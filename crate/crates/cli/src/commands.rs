// SPDX-License-Identifier: MIT OR Apache-2.0

//! Verb implementations. Each returns the paths it wrote.

use std::path::{Path, PathBuf};

use image::RgbImage;
use resstream::featviz::{to_rgb8, FzCache, FzConfig, Objective, TapModel};
use resstream::resnet::preprocess::decode_rgb;
use resstream::resnet::{BlockRef, OutputMode, ResNet18, Tap};
use resstream::sweep::{
    inhibition_sweep, top9_mine, top_by_scale_metric, weight_magnitude_sweep, BlockSweepReport, ChannelRecord, Corpus, InhibitionReport,
    MagnitudeReport, PassOptions, Sweeper, Top9Set,
};
use serde::{Deserialize, Serialize};

use crate::args::{parse_blocks, Command, RunArgs};
use crate::config::{read_json, write_json, ArtifactHeader, RunConfig, WeightsSource};
use crate::error::{CliError, CliResult};
use crate::montage::{montage, write_png, Annotation, MontageRow};
use crate::plots;
use crate::table::{channel_rows, write_rows};

pub fn block_slug(block: BlockRef) -> String {
    block.to_string().replace('.', "_")
}

/// Summary printed by `check-weights`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsSummary {
    pub tensor_count: usize,
    pub learnable_tensor_count: usize,
    pub weights_hash: String,
}

/// What `mine-top9` writes: the set and the corpus it indexes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Top9Artifact {
    pub corpus: Corpus,
    pub top9: Top9Set,
}

/// Outcome of a verb: files written and an optional stdout payload.
#[derive(Debug, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub stdout: Option<serde_json::Value>,
}

struct Session {
    args: RunArgs,
    net: ResNet18<f32>,
    cache: FzCache,
    base: FzConfig,
}

impl Session {
    fn open(args: &RunArgs) -> CliResult<Self> {
        let ws = args.weights.load()?;
        let net = ResNet18::new(&ws)?;
        std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
        let cache = match &args.cache_dir {
            Some(d) => FzCache::new(d)?,
            None => FzCache::from_env_or(args.out.join("cache"))?,
        };
        let mut base = FzConfig::default().with_seed(args.seed);
        if let Some(s) = args.steps {
            base = base.with_steps(s);
        }
        if let Some(s) = args.image_size {
            base = base.with_image_size(s);
        }
        if let Some(lr) = args.lr {
            base.learning_rate = lr;
        }
        if let Some(j) = args.jitter {
            base = base.with_jitter(j);
        }
        base.validate()?;
        if base.is_reduced() {
            log::warn!("reduced FZ configuration: results are labelled as such");
        }
        let ckpt = args.out.join("checkpoints");
        if !args.resume && ckpt.exists() {
            std::fs::remove_dir_all(&ckpt).map_err(|e| CliError::io(&ckpt, e))?;
        }
        Ok(Self {
            args: args.clone(),
            net,
            cache,
            base,
        })
    }

    fn mode(&self) -> OutputMode {
        if self.args.post_relu_output {
            OutputMode::PostRelu
        } else {
            OutputMode::PreRelu
        }
    }

    fn sweeper(&self) -> Sweeper<'_> {
        let s = Sweeper::new(&self.net, &self.cache, self.base.clone())
            .with_output_mode(self.mode())
            .with_checkpoints(self.args.out.join("checkpoints"));
        if self.args.jitter.is_some() {
            s.with_fixed_jitter()
        } else {
            s
        }
    }

    fn run_config(&self, verb: &str, blocks: &[BlockRef], corpus: Option<&Path>) -> RunConfig {
        RunConfig {
            verb: verb.to_string(),
            weights: self.args.weights.clone(),
            output_dir: self.args.out.clone(),
            blocks: blocks.to_vec(),
            fz: self.base.clone(),
            tap_jitter: self.args.jitter.is_none(),
            corpus: corpus.map(Path::to_path_buf),
            seed: self.args.seed,
            output_mode: self.mode(),
        }
    }

    fn header(&self, run: &RunConfig, corpus_hash: Option<&str>) -> ArtifactHeader {
        ArtifactHeader::new(run, self.net.weights_hash(), corpus_hash)
    }

    fn path(&self, name: String) -> PathBuf {
        self.args.out.join(name)
    }

    fn fz_image(&self, tap: Tap, channel: usize, objective: Objective, cfg: &FzConfig) -> CliResult<RgbImage> {
        let model = TapModel::new(&self.net, tap)?;
        let (fz, _) = self.cache.get_or_compute(&model, channel, objective, cfg)?;
        Ok(to_rgb8(&fz.image)?)
    }

    /// Sweep `block` and write its CSV and JSON under `prefix`.
    fn sweep_block(
        &self,
        block: BlockRef,
        prefix: &str,
        header: &ArtifactHeader,
        out: &mut Outcome,
    ) -> CliResult<BlockSweepReport> {
        let report = self.sweeper().block_sweep(block)?;
        let slug = block_slug(block);
        let csv = self.path(format!("{prefix}_{slug}.csv"));
        write_rows(&csv, &channel_rows(&report, header))?;
        let json = self.path(format!("{prefix}_{slug}.json"));
        write_json(&json, header, &report)?;
        if !report.flagged.is_empty() {
            log::warn!("block {block}: {} channels flagged and excluded", report.flagged.len());
        }
        out.written.extend([csv, json]);
        Ok(report)
    }
}

fn write_svg(path: PathBuf, svg: String, out: &mut Outcome) -> CliResult<()> {
    std::fs::write(&path, svg).map_err(|e| CliError::io(&path, e))?;
    out.written.push(path);
    Ok(())
}

pub fn run(command: &Command) -> CliResult<Outcome> {
    match command {
        Command::CheckWeights { weights } => check_weights(weights),
        Command::Viz {
            run,
            block,
            role,
            channel,
            objective,
        } => viz(run, Tap::new(*block, (*role).into()), *channel, (*objective).into()),
        Command::Mix { run, block } => mix(run, *block),
        Command::Scale { run, block, top, top9 } => scale(run, *block, *top, top9.as_deref()),
        Command::Sweep { run, blocks, corpus } => sweep(run, &parse_blocks(blocks).map_err(CliError::Input)?, corpus.as_deref()),
        Command::MineTop9 {
            run,
            blocks,
            corpus,
            checkpoint_every,
        } => mine_top9(run, &parse_blocks(blocks).map_err(CliError::Input)?, corpus, *checkpoint_every),
        Command::Report { out, blocks } => report(out, &parse_blocks(blocks).map_err(CliError::Input)?),
    }
}

fn check_weights(weights: &WeightsSource) -> CliResult<Outcome> {
    let ws = weights.load()?;
    // Building the network checks every tensor against the architecture.
    ResNet18::<f32>::new(&ws)?;
    let summary = WeightsSummary {
        tensor_count: ws.tensor_count(),
        learnable_tensor_count: ws.parameter_count(),
        weights_hash: ws.hash().to_string(),
    };
    Ok(Outcome {
        written: Vec::new(),
        stdout: Some(serde_json::to_value(summary)?),
    })
}

fn viz(args: &RunArgs, tap: Tap, channel: usize, objective: Objective) -> CliResult<Outcome> {
    let s = Session::open(args)?;
    tap.block.ensure_studied()?;
    let cfg = s.sweeper().config_for(tap);
    let model = TapModel::new(&s.net, tap)?;
    let (fz, hit) = s.cache.get_or_compute(&model, channel, objective, &cfg)?;
    if hit {
        log::info!("FZ for {tap} channel {channel} served from cache");
    }
    let run = RunConfig { fz: cfg, ..s.run_config("viz", &[tap.block], None) };
    let header = s.header(&run, None);
    let stem = format!("viz_{}_{}_{channel}_{objective}", block_slug(tap.block), tap.role.as_str());
    let mut out = Outcome::default();
    let png = s.path(format!("{stem}.png"));
    write_png(&png, &to_rgb8(&fz.image)?, &header)?;
    let json = s.path(format!("{stem}.json"));
    write_json(&json, &header, &fz.meta)?;
    out.written.extend([png, json]);
    Ok(out)
}

fn mix(args: &RunArgs, block: BlockRef) -> CliResult<Outcome> {
    let s = Session::open(args)?;
    let header = s.header(&s.run_config("mix", &[block], None), None);
    let mut out = Outcome::default();
    let report = s.sweep_block(block, "mix", &header, &mut out)?;
    let svg = plots::histogram_svg(block, &report.histogram, &header);
    write_svg(s.path(format!("mix_hist_{}.svg", block_slug(block))), svg, &mut out)?;
    Ok(out)
}

/// Top-ranked channels of a scale sweep with their measurements.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopChannels {
    pub block: BlockRef,
    pub channels: Vec<ChannelRecord>,
    pub top9_available: bool,
}

fn load_top9(path: &Path, net: &ResNet18<f32>) -> CliResult<Top9Artifact> {
    let art = read_json::<Top9Artifact>(path)?.data;
    if art.top9.weights_hash != net.weights_hash() || art.top9.corpus_hash != art.corpus.manifest_hash {
        return Err(CliError::Input(format!(
            "{} was mined with other weights or does not match its corpus",
            path.display()
        )));
    }
    Ok(art)
}

fn top9_images(art: &Top9Artifact, tap: Tap, channel: usize) -> Option<Vec<RgbImage>> {
    let tracker = art.top9.get(tap, channel)?;
    let images: Vec<RgbImage> = tracker
        .image_ids()
        .iter()
        .filter_map(|&id| match decode_rgb(&art.corpus.path(id)) {
            Ok(img) => Some(img),
            Err(e) => {
                log::warn!("top-9 image {id}: {e}");
                None
            }
        })
        .collect();
    Some(images)
}

fn scale(args: &RunArgs, block: BlockRef, top: usize, top9: Option<&Path>) -> CliResult<Outcome> {
    let s = Session::open(args)?;
    let art = top9.map(|p| load_top9(p, &s.net)).transpose()?;
    let corpus_hash = art.as_ref().map(|a| a.corpus.manifest_hash.clone());
    let corpus_dir = art.as_ref().map(|a| a.corpus.root.clone());
    let run = s.run_config("scale", &[block], corpus_dir.as_deref());
    let header = s.header(&run, corpus_hash.as_deref());
    let mut out = Outcome::default();
    let report = s.sweep_block(block, "scale", &header, &mut out)?;

    let chosen: Vec<usize> = top_by_scale_metric(&report.scale_records(), top)
        .into_iter()
        .map(|r| r.channel)
        .collect();
    let sweeper = s.sweeper();
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &c in &chosen {
        let rec = report.record(c).expect("ranked channels are measured").clone();
        let note = Annotation {
            m: rec.mix.m,
            delta_up: rec.scale.delta_up,
            delta_down: rec.scale.delta_down,
        };
        for tap in [Tap::input(block), Tap::block(block)] {
            let cfg = sweeper.config_for(tap);
            rows.push(MontageRow {
                label: format!("{tap} ch {c}"),
                center: s.fz_image(tap, c, Objective::Center, &cfg)?,
                channel: s.fz_image(tap, c, Objective::Channel, &cfg)?,
                top9: art.as_ref().and_then(|a| top9_images(a, tap, c)),
                annotation: Some(note),
            });
        }
        records.push(rec);
    }
    let slug = block_slug(block);
    let metrics = s.path(format!("scale_{slug}_top.json"));
    write_json(
        &metrics,
        &header,
        &TopChannels {
            block,
            channels: records,
            top9_available: art.is_some(),
        },
    )?;
    out.written.push(metrics);
    if rows.is_empty() {
        log::warn!("block {block}: no channel has a defined scale metric; no montage written");
    } else {
        let png = s.path(format!("scale_{slug}_montage.png"));
        write_png(&png, &montage(&rows), &header)?;
        out.written.push(png);
    }
    Ok(out)
}

fn sweep(args: &RunArgs, blocks: &[BlockRef], corpus: Option<&Path>) -> CliResult<Outcome> {
    let s = Session::open(args)?;
    let corpus = corpus.map(Corpus::scan).transpose()?;
    let corpus_hash = corpus.as_ref().map(|c| c.manifest_hash.clone());
    let run = s.run_config("sweep", blocks, corpus.as_ref().map(|c| c.root.as_path()));
    let header = s.header(&run, corpus_hash.as_deref());
    let mut out = Outcome::default();
    let ws = args.weights.load()?;
    for &block in blocks {
        let report = s.sweep_block(block, "sweep", &header, &mut out)?;
        let slug = block_slug(block);
        match weight_magnitude_sweep(&ws, &report) {
            Ok(m) => {
                let p = s.path(format!("magnitude_{slug}.json"));
                write_json(&p, &header, &m)?;
                out.written.push(p);
            }
            Err(resstream::Error::Unsupported(why)) => log::info!("no magnitude analysis: {why}"),
            Err(e) => return Err(e.into()),
        }
        if let Some(c) = &corpus {
            let inh = inhibition_sweep(&s.net, &report, c)?;
            let p = s.path(format!("inhibition_{slug}.json"));
            write_json(&p, &header, &inh)?;
            out.written.push(p);
        }
    }
    out.written.extend(report(&args.out, blocks)?.written);
    Ok(out)
}

fn mine_top9(args: &RunArgs, blocks: &[BlockRef], corpus: &Path, every: usize) -> CliResult<Outcome> {
    let s = Session::open(args)?;
    let corpus = Corpus::scan(corpus)?;
    let taps: Vec<Tap> = blocks.iter().flat_map(|&b| [Tap::input(b), Tap::block(b)]).collect();
    let opts = PassOptions {
        checkpoint: Some(args.out.join("checkpoints").join("top9.json")),
        every,
    };
    let top9 = top9_mine(&s.net, &taps, &corpus, &opts)?;
    let run = s.run_config("mine-top9", blocks, Some(&corpus.root));
    let header = s.header(&run, Some(&corpus.manifest_hash));
    let path = s.path("top9.json".into());
    write_json(&path, &header, &Top9Artifact { corpus, top9 })?;
    Ok(Outcome {
        written: vec![path],
        stdout: None,
    })
}

fn sweep_artifact(out_dir: &Path, block: BlockRef) -> Option<PathBuf> {
    let slug = block_slug(block);
    ["sweep", "scale", "mix"]
        .iter()
        .map(|p| out_dir.join(format!("{p}_{slug}.json")))
        .find(|p| p.exists())
}

/// SVG plots for `blocks` from the sweep artifacts in `out_dir`.
pub fn report(out_dir: &Path, blocks: &[BlockRef]) -> CliResult<Outcome> {
    let mut out = Outcome::default();
    if blocks.is_empty() {
        log::warn!("empty block selection: no plots written");
        return Ok(out);
    }
    let mut bars = Vec::new();
    let mut bar_header = None;
    for &block in blocks {
        let Some(path) = sweep_artifact(out_dir, block) else {
            log::warn!("block {block}: no sweep artifact in {}", out_dir.display());
            continue;
        };
        let art = read_json::<BlockSweepReport>(&path)?;
        let slug = block_slug(block);
        let svg = plots::histogram_svg(block, &art.data.histogram, &art.header);
        write_svg(out_dir.join(format!("hist_{slug}.svg")), svg, &mut out)?;
        bars.push((block, art.data.pass_pct_all, art.data.pass_pct_without_mix));
        let mag = out_dir.join(format!("magnitude_{slug}.json"));
        if mag.exists() {
            let m = read_json::<MagnitudeReport>(&mag)?;
            write_svg(out_dir.join(format!("magnitude_{slug}.svg")), plots::magnitude_svg(&m.data, &m.header), &mut out)?;
        }
        let inh = out_dir.join(format!("inhibition_{slug}.json"));
        if inh.exists() {
            let i = read_json::<InhibitionReport>(&inh)?;
            write_svg(out_dir.join(format!("inhibition_{slug}.svg")), plots::inhibition_svg(&i.data, &i.header), &mut out)?;
        }
        bar_header.get_or_insert(art.header);
    }
    if let Some(h) = bar_header {
        write_svg(out_dir.join("pass_bars.svg"), plots::pass_bars_svg(&bars, &h), &mut out)?;
    }
    Ok(out)
}

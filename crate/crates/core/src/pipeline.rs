//! End-to-end orchestration: cube simulation, processing and report files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::assoc::{
    associate, enumerate_candidates, resolve_targets, write_pairs_csv, write_positions_csv, Association, Candidate,
    Geometry, Resolved,
};
use crate::config::RunConfig;
use crate::csvfmt::g9;
use crate::cube_io::{CubeHeader, CubeReader, CubeWriter};
use crate::error::{Error, Result};
use crate::range::{
    candidate_bins, cfar_detect, mean_profile, range_fft_reader, simulate_range_time_map, write_range_map_csv,
    Detection, RangeTimeMap,
};
use crate::scene::IfSynthesizer;
use crate::spectral::{
    averaged_autocorrelation, member_correlations, rate_spectrum, write_autocorrelation_csv, write_spectrum_csv,
    write_summary_csv, AveragedAutocorrelation, RateSpectrum, TargetSummary,
};
use crate::vital::{respiration_signal, write_resp_csv, RespSignal};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const REPORT_FILE: &str = "report.txt";

pub fn cube_file_name(radar_id: u32) -> String {
    format!("radar_{radar_id}.msrc")
}

/// Per-radar products of range processing and phase extraction.
#[derive(Debug, Clone)]
pub struct RadarProducts {
    pub map: RangeTimeMap,
    pub profile: Vec<f64>,
    pub detections: Vec<Detection>,
    pub bins: Vec<usize>,
    pub signals: Vec<RespSignal>,
}

impl RadarProducts {
    pub fn radar_id(&self) -> u32 {
        self.map.radar_id
    }

    pub fn detected_ranges(&self) -> Vec<f64> {
        self.detections.iter().map(|d| d.range).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub rng_seed: u64,
    pub config_text: String,
    pub geometry: Geometry,
    pub radars: [RadarProducts; 2],
    pub candidates: Vec<Candidate>,
    pub association: Association,
    pub resolved: Resolved,
    pub autocorrelations: Vec<AveragedAutocorrelation>,
    pub spectra: Vec<RateSpectrum>,
    pub targets: Vec<TargetSummary>,
}

/// Ids of the two radars used for processing: the lowest two.
pub fn processing_radars(cfg: &RunConfig) -> Result<[u32; 2]> {
    let mut ids: Vec<u32> = cfg.scene.radars.iter().map(|r| r.id).collect();
    ids.sort_unstable();
    match ids[..] {
        [a, b, ..] => Ok([a, b]),
        _ => Err(Error::Config("at least 2 radars are required".into())),
    }
}

/// Baseline geometry of two configured radars.
pub fn geometry(cfg: &RunConfig, ids: [u32; 2]) -> Result<Geometry> {
    let r1 = cfg.scene.radar(ids[0]).map_err(|e| Error::Config(e.to_string()))?;
    let r2 = cfg.scene.radar(ids[1]).map_err(|e| Error::Config(e.to_string()))?;
    if r1.plane_offset_d != r2.plane_offset_d {
        return Err(Error::Config(format!(
            "radars {} and {} have different plane offsets ({} vs {} m)",
            r1.id, r2.id, r1.plane_offset_d, r2.plane_offset_d
        )));
    }
    Geometry::new(r1.position_x, r2.position_x, r1.plane_offset_d).map_err(|e| Error::Config(e.to_string()))
}

/// Writes one cube file per radar plus a manifest; returns the cube paths.
pub fn simulate(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.scene.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let scene = &cfg.scene;
    let mut paths = Vec::new();
    let mut manifest = format!("rng_seed = {}\n", scene.rng_seed);
    for radar in &scene.radars {
        let synth = IfSynthesizer::new(scene, radar.id)?;
        let name = cube_file_name(radar.id);
        let path = out_dir.join(&name);
        let header = CubeHeader {
            radar_id: radar.id,
            waveform: scene.waveform.clone(),
            start_offset: radar.start_offset,
        };
        let mut writer = CubeWriter::create(&path, &header)?;
        let mut frame = vec![Complex64::new(0.0, 0.0); header.frame_len()];
        for f in 0..scene.waveform.n_frames {
            synth.frame(f, &mut frame);
            writer.write_frame(&frame)?;
        }
        writer.finish()?;
        manifest.push_str(&format!("radar.{} = {name}\n", radar.id));
        paths.push(path);
    }
    write_file(&out_dir.join(MANIFEST_FILE), |w| w.write_all(manifest.as_bytes()))?;
    Ok(paths)
}

/// Range-time maps of the two processing radars from cube files in `dir`.
pub fn load_maps(cfg: &RunConfig, dir: &Path) -> Result<[RangeTimeMap; 2]> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut readers = Vec::new();
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "msrc") {
            files.push(path);
        }
    }
    files.sort();
    for path in files {
        readers.push(CubeReader::open(&path)?);
    }
    readers.sort_by_key(|r| r.header().radar_id);
    if readers.len() < 2 {
        return Err(Error::Format(format!(
            "{}: need at least two .msrc cube files, found {}",
            dir.display(),
            readers.len()
        )));
    }
    for pair in readers.windows(2) {
        if pair[0].header().radar_id == pair[1].header().radar_id {
            return Err(Error::Format(format!(
                "{}: two cube files for radar {}",
                dir.display(),
                pair[0].header().radar_id
            )));
        }
    }
    let mut it = readers.into_iter().take(2);
    let (mut a, mut b) = (it.next().unwrap(), it.next().unwrap());
    Ok([range_fft_reader(&mut a, cfg.window)?, range_fft_reader(&mut b, cfg.window)?])
}

/// Range-time maps of the two processing radars synthesized in memory.
pub fn simulate_maps(cfg: &RunConfig) -> Result<[RangeTimeMap; 2]> {
    cfg.scene.validate()?;
    let [a, b] = processing_radars(cfg)?;
    Ok([
        simulate_range_time_map(&cfg.scene, a, cfg.window)?,
        simulate_range_time_map(&cfg.scene, b, cfg.window)?,
    ])
}

fn radar_products(cfg: &RunConfig, map: RangeTimeMap) -> Result<RadarProducts> {
    let profile = mean_profile(&map)?;
    let power: Vec<f64> = profile.iter().map(|v| v * v).collect();
    let detections = cfar_detect(&power, &cfg.cfar, map.bin_spacing)?;
    if detections.is_empty() {
        return Err(Error::NoDetections(format!(
            "radar {} has no range bin above the CFAR threshold",
            map.radar_id
        )));
    }
    let bins = candidate_bins(&detections, cfg.expansion, map.n_bins);
    let signals = bins
        .iter()
        .map(|&bin| respiration_signal(&map, bin, cfg.band))
        .collect::<Result<_>>()?;
    Ok(RadarProducts {
        map,
        profile,
        detections,
        bins,
        signals,
    })
}

/// Runs detection, association, localization and rate estimation on two
/// range-time maps.
pub fn process_maps(cfg: &RunConfig, maps: [RangeTimeMap; 2]) -> Result<RunReport> {
    cfg.validate()?;
    cfg.check_duration()?;
    let [m1, m2] = maps;
    let geom = geometry(cfg, [m1.radar_id, m2.radar_id])?;
    let radars = [radar_products(cfg, m1)?, radar_products(cfg, m2)?];
    let candidates = enumerate_candidates(&geom, &radars[0].detected_ranges(), &radars[1].detected_ranges());
    let association = associate(&radars[0].signals, &radars[1].signals, &cfg.association)?;
    if association.sets.is_empty() {
        return Err(Error::NoAssociations(format!(
            "no radar {} / radar {} bin pair correlates above {}",
            radars[0].radar_id(),
            radars[1].radar_id(),
            cfg.association.gamma_th
        )));
    }
    let resolved = resolve_targets(&association.sets, &geom);
    if resolved.targets.is_empty() {
        return Err(Error::NoAssociations(format!(
            "all {} associated targets are geometrically infeasible",
            resolved.dropped.len()
        )));
    }

    let mut autocorrelations = Vec::new();
    let mut spectra = Vec::new();
    let mut targets = Vec::new();
    for set in &resolved.targets {
        let store = member_correlations(set, &radars[0].signals, &radars[1].signals, cfg.spectrum_max_lag())?;
        let acorr = averaged_autocorrelation(set, &store)?;
        let spectrum = rate_spectrum(&acorr, cfg.band, cfg.zero_pad_factor)?;
        targets.push(TargetSummary {
            target_id: set.target_id,
            rate_bpm: spectrum.rate_bpm,
            n_pairs: set.pairs.len(),
            position: set.position.expect("resolved targets carry positions"),
        });
        autocorrelations.push(acorr);
        spectra.push(spectrum);
    }

    Ok(RunReport {
        rng_seed: cfg.scene.rng_seed,
        config_text: cfg.to_config_text(),
        geometry: geom,
        radars,
        candidates,
        association,
        resolved,
        autocorrelations,
        spectra,
        targets,
    })
}

/// Processes cube files from `dir`.
pub fn process_dir(cfg: &RunConfig, dir: &Path) -> Result<RunReport> {
    cfg.validate()?;
    cfg.check_duration()?;
    process_maps(cfg, load_maps(cfg, dir)?)
}

/// Simulates and processes in memory, without cube files.
pub fn run_in_memory(cfg: &RunConfig) -> Result<RunReport> {
    process_maps(cfg, simulate_maps(cfg)?)
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_profile_csv<W: Write>(out: &mut W, p: &RadarProducts) -> std::io::Result<()> {
    writeln!(out, "bin,range_m,magnitude,detected")?;
    for (bin, v) in p.profile.iter().enumerate() {
        let detected = p.detections.iter().any(|d| d.bin_index == bin);
        writeln!(out, "{bin},{},{},{detected}", g9(p.map.range_of(bin)), g9(*v))?;
    }
    Ok(())
}

fn write_candidates_csv<W: Write>(out: &mut W, candidates: &[Candidate]) -> std::io::Result<()> {
    writeln!(out, "r1_m,r2_m,x_m,y_m,feasible")?;
    for c in candidates {
        let (r1, r2) = c.ranges;
        match &c.position {
            Ok([x, y]) => writeln!(out, "{},{},{},{},true", g9(r1), g9(r2), g9(*x), g9(*y))?,
            Err(_) => writeln!(out, "{},{},,,false", g9(r1), g9(r2))?,
        }
    }
    Ok(())
}

/// Human-readable summary; contains no timing so reruns are byte-identical.
pub fn render_report(report: &RunReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("rng_seed = {}\n", report.rng_seed));
    for p in &report.radars {
        let ranges: Vec<String> = p.detected_ranges().iter().map(|r| g9(*r)).collect();
        s.push_str(&format!("radar {} detections (m) = {}\n", p.radar_id(), ranges.join(" ")));
    }
    let pairs = &report.association.pairs;
    let accepted = pairs.iter().filter(|p| p.accepted).count();
    let lag = report.association.common_lag as f64 / report.radars[0].map.slow_rate;
    s.push_str(&format!(
        "pairs evaluated = {}, accepted = {accepted}, common lag (s) = {}\n",
        pairs.len(),
        g9(lag)
    ));
    for p in pairs {
        s.push_str(&format!(
            "pair {} m / {} m: peak {} at {} s{}\n",
            g9(p.range1),
            g9(p.range2),
            g9(p.peak_value),
            g9(p.peak_lag),
            if p.accepted { " (accepted)" } else { "" }
        ));
    }
    for t in &report.targets {
        s.push_str(&format!(
            "target {}: x = {} m, y = {} m, rate = {} bpm, pairs = {}\n",
            t.target_id,
            g9(t.position[0]),
            g9(t.position[1]),
            g9(t.rate_bpm),
            t.n_pairs
        ));
    }
    for (set, reason) in &report.resolved.dropped {
        s.push_str(&format!("dropped association {}: {reason}\n", set.target_id));
    }
    s.push_str("\n# configuration\n");
    s.push_str(&report.config_text);
    s
}

/// Writes the summary, the text report and, if requested, every
/// intermediate CSV. Returns the written paths in order.
pub fn write_outputs(report: &RunReport, out_dir: &Path, intermediates: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut emit = |name: String, body: &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>| -> Result<()> {
        let path = out_dir.join(name);
        write_file(&path, body)?;
        written.push(path);
        Ok(())
    };
    emit(SUMMARY_FILE.into(), &|w| write_summary_csv(w, &report.targets))?;
    emit(REPORT_FILE.into(), &|w| w.write_all(render_report(report).as_bytes()))?;
    if intermediates {
        for p in &report.radars {
            let id = p.radar_id();
            emit(format!("range_map_radar_{id}.csv"), &|w| write_range_map_csv(w, &p.map))?;
            emit(format!("profile_radar_{id}.csv"), &|w| write_profile_csv(w, p))?;
            emit(format!("resp_radar_{id}.csv"), &|w| write_resp_csv(w, &p.signals))?;
        }
        emit("candidates.csv".into(), &|w| write_candidates_csv(w, &report.candidates))?;
        emit("pairs.csv".into(), &|w| write_pairs_csv(w, &report.association.pairs))?;
        emit("positions.csv".into(), &|w| write_positions_csv(w, &report.resolved.targets))?;
        for (a, s) in report.autocorrelations.iter().zip(&report.spectra) {
            emit(format!("acorr_target_{}.csv", a.target_id), &|w| write_autocorrelation_csv(w, a))?;
            emit(format!("spectrum_target_{}.csv", s.target_id), &|w| write_spectrum_csv(w, s))?;
        }
    }
    Ok(written)
}

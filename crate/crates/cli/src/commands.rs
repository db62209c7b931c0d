use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use aperture_forge::blur::blur;
use aperture_forge::corpus;
use aperture_forge::deconv::{self, nsr_for, DeconvConfig, DeconvMethod};
use aperture_forge::depth::{self, parse_scales, DepthMap, KernelBank, MrfParams};
use aperture_forge::image::Image;
use aperture_forge::io;
use aperture_forge::metrics::{PatternEvaluator, ScaleSet};
use aperture_forge::pareto::{evolve, select_final, GaConfig};
use aperture_forge::pattern::{AperturePattern, CELLS};
use aperture_forge::prior::estimate_prior;
use aperture_forge::psf::{BlurScale, KernelFamily, Psf};
use aperture_forge::quality::aggregate_quality;
use aperture_forge::radiometry::ImagingConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::*;
use crate::manifest::beside;
use crate::{CliError, Job};

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn scales_arg(spec: &str) -> Result<Vec<i32>> {
    parse_scales(spec).map_err(|e| usage(e.to_string()))
}

fn blur_scale(s: i32) -> Result<BlurScale> {
    BlurScale::new(s).map_err(|e| usage(e.to_string()))
}

fn sigmas_arg(spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .map(|t| match t.trim().parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
            _ => Err(usage(format!("noise level '{t}' is not a non-negative number"))),
        })
        .collect()
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(usage(format!("--sigma {sigma} must be a non-negative number")))
    }
}

/// Batch output file for one (scale, noise) cell.
fn batch_file(scale: i32, sigma: f64) -> String {
    format!("blur_s{scale}_sigma{sigma}.pgm")
}

fn truth_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".truth.txt");
    out.with_file_name(name)
}

fn kernel_inputs(k: &KernelArgs) -> Vec<PathBuf> {
    k.pattern.iter().chain(&k.bank).cloned().collect()
}

fn imaging_inputs(a: &ImagingArgs) -> Vec<PathBuf> {
    a.config.iter().chain(&a.prior).cloned().collect()
}

pub(crate) fn plan(cmd: &Command) -> Result<Job> {
    let mut job = Job::default();
    match cmd {
        Command::Evaluate(a) => {
            job.inputs.extend(a.pattern.clone());
            job.inputs.extend(imaging_inputs(&a.imaging));
            job.default_manifest = PathBuf::from("evaluate.manifest.json");
        }
        Command::Search(a) => {
            job.inputs.extend(imaging_inputs(&a.imaging));
            for f in ["front.csv", "trace.csv", "selected.txt"] {
                job.outputs.push(a.out_dir.join(f));
            }
            job.seeds.insert("ga".into(), a.seed);
            job.default_manifest = a.out_dir.join("manifest.json");
        }
        Command::Simulate(a) => {
            job.inputs.extend(a.image.clone());
            job.inputs.extend(kernel_inputs(&a.kernel));
            job.seeds.insert("noise".into(), a.seed);
            if a.dead_leaves.is_some() {
                job.seeds.insert("scene".into(), a.seed);
            }
            match (&a.out, &a.out_dir) {
                (Some(out), _) => {
                    job.outputs.push(out.clone());
                    job.outputs.push(truth_path(out));
                    job.default_manifest = beside(out);
                }
                (None, Some(dir)) => {
                    let (scales, sigmas) = match (&a.scales, &a.sigmas) {
                        (Some(s), Some(n)) => (scales_arg(s)?, sigmas_arg(n)?),
                        _ => return Err(usage("--out-dir needs --scales and --sigmas")),
                    };
                    for &n in &sigmas {
                        for &s in &scales {
                            job.outputs.push(dir.join(batch_file(s, n)));
                        }
                    }
                    job.outputs.push(dir.join("index.csv"));
                    job.default_manifest = dir.join("manifest.json");
                }
                (None, None) => return Err(usage("one of --out or --out-dir is required")),
            }
        }
        Command::Depth(a) => {
            job.inputs.push(a.image.clone());
            job.inputs.extend(kernel_inputs(&a.kernel));
            for f in ["depth.txt", "depth_labels.pgm", "raw.txt"] {
                job.outputs.push(a.out_dir.join(f));
            }
            job.default_manifest = a.out_dir.join("manifest.json");
        }
        Command::Deblur(a) => {
            job.inputs.push(a.image.clone());
            job.inputs.extend(a.depth.clone());
            job.inputs.extend(kernel_inputs(&a.kernel));
            job.outputs.push(a.out.clone());
            job.default_manifest = beside(&a.out);
        }
        Command::Quality(a) => {
            job.inputs.push(a.blurred.clone());
            job.inputs.extend(a.deblurred.clone());
            job.inputs.extend(kernel_inputs(&a.kernel));
            job.default_manifest = PathBuf::from("quality.manifest.json");
        }
        Command::Prior(a) => {
            job.inputs.extend(a.images.iter().cloned());
            job.outputs.push(a.out.clone());
            if a.images.is_empty() {
                job.seeds.insert("corpus".into(), corpus::BUNDLED_SEED);
            }
            job.default_manifest = beside(&a.out);
        }
    }
    Ok(job)
}

pub(crate) fn execute(cmd: &Command, csv: bool) -> Result<()> {
    match cmd {
        Command::Evaluate(a) => evaluate(a, csv),
        Command::Search(a) => search(a, csv),
        Command::Simulate(a) => simulate(a),
        Command::Depth(a) => depth_cmd(a, csv),
        Command::Deblur(a) => deblur(a),
        Command::Quality(a) => quality(a, csv),
        Command::Prior(a) => prior(a),
    }
}

// ---------------------------------------------------------------------------
// shared plumbing

fn print_table(csv: bool, header: &[&str], rows: &[Vec<String>]) {
    let mut out = String::new();
    if csv {
        writeln!(out, "{}", header.join(",")).unwrap();
        for r in rows {
            writeln!(out, "{}", r.join(",")).unwrap();
        }
    } else {
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for r in rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: Vec<&str>| -> String {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            padded.join("  ").trim_end().to_string()
        };
        writeln!(out, "{}", line(header.to_vec())).unwrap();
        for r in rows {
            writeln!(out, "{}", line(r.iter().map(String::as_str).collect())).unwrap();
        }
    }
    print!("{out}");
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => create_dir(dir),
        None => Ok(()),
    }
}

enum Source {
    Family(KernelFamily),
    Bank(KernelBank),
}

impl Source {
    fn load(k: &KernelArgs) -> Result<Self> {
        Ok(if let Some(p) = &k.pattern {
            Source::Family(KernelFamily::Coded(io::read_pattern(p)?))
        } else if let Some(dir) = &k.bank {
            Source::Bank(io::read_bank_dir(dir)?)
        } else if k.conventional {
            Source::Family(KernelFamily::Conventional {
                throughput: AperturePattern::selected().open_count(),
            })
        } else {
            Source::Family(KernelFamily::Coded(AperturePattern::selected()))
        })
    }

    fn psf(&self, s: i32) -> Result<Psf> {
        match self {
            Source::Family(f) => Ok(f.psf(blur_scale(s)?)),
            Source::Bank(b) => b
                .get(s)
                .cloned()
                .ok_or_else(|| CliError::Data(aperture_forge::Error::Config(format!("kernel bank has no scale {s}")))),
        }
    }

    /// Bank over `scales`; a directory bank is used whole when none are given.
    fn bank(&self, scales: Option<&[i32]>) -> Result<KernelBank> {
        match (self, scales) {
            (Source::Bank(b), None) => Ok(b.clone()),
            (_, Some(list)) => Ok(KernelBank::new(
                list.iter().map(|&s| self.psf(s)).collect::<Result<_>>()?,
            )?),
            (Source::Family(f), None) => Ok(KernelBank::from_family(f, &(1..=10).collect::<Vec<_>>())?),
        }
    }
}

fn evaluator(a: &ImagingArgs) -> Result<PatternEvaluator> {
    let cfg = match &a.config {
        Some(p) => io::read_config(p)?,
        None => ImagingConfig::default(),
    };
    let prior = match &a.prior {
        Some(p) => io::read_prior(p)?.normalized_to_unit_mean(),
        None => corpus::metric_prior(),
    };
    let scales = scales_arg(&a.scales)?;
    if scales.iter().any(|&s| s < 1) {
        return Err(usage("metric scales must be positive"));
    }
    let scales = ScaleSet::new(scales.into_iter().map(|s| s as u32).collect()).map_err(|e| usage(e.to_string()))?;
    Ok(PatternEvaluator::new(cfg, prior, scales)?)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------------------
// subcommands

fn evaluate(a: &EvaluateArgs, csv: bool) -> Result<()> {
    let ev = evaluator(&a.imaging)?;
    let (name, family) = if a.conventional {
        if a.throughput == 0 || a.throughput > CELLS {
            return Err(usage(format!("--throughput must be in 1..={CELLS}")));
        }
        (
            format!("conventional({})", a.throughput),
            KernelFamily::Conventional {
                throughput: a.throughput,
            },
        )
    } else {
        let p = match &a.pattern {
            Some(path) => io::read_pattern(path)?,
            None => AperturePattern::selected(),
        };
        (p.bit_string(), KernelFamily::Coded(p))
    };
    let s = ev.score_family(&family)?;
    print_table(
        csv,
        &["aperture", "open", "r_max", "d_min", "d_r_min"],
        &[vec![
            name,
            family.throughput().to_string(),
            fmt(s.r_max),
            fmt(s.d_min),
            fmt(s.d_r_min),
        ]],
    );
    Ok(())
}

fn search(a: &SearchArgs, csv: bool) -> Result<()> {
    let ev = evaluator(&a.imaging)?;
    let ga = GaConfig {
        population_size: a.population,
        generations: a.generations,
        crossover_prob: a.crossover,
        mutation_prob: a.mutation.unwrap_or(1.0 / CELLS as f64),
        rng_seed: a.seed,
        ..GaConfig::default()
    };
    ga.validate().map_err(|e| usage(e.to_string()))?;
    let outcome = evolve(&ga, |p| ev.score_pattern(p))?;
    let selected = select_final(&outcome.front)?;

    create_dir(&a.out_dir)?;
    let mut front = String::from("bits,open,r_max,d_min,d_r_min,selected\n");
    let mut rows = Vec::new();
    for ind in &outcome.front {
        let p = ind.chromosome;
        let sel = p == selected;
        writeln!(
            front,
            "{},{},{},{},{},{}",
            p.bit_string(),
            p.open_count(),
            ind.scores.r_max,
            ind.scores.d_min,
            ind.scores.d_r_min,
            sel as u8
        )
        .unwrap();
        rows.push(vec![
            p.bit_string(),
            p.open_count().to_string(),
            fmt(ind.scores.r_max),
            fmt(ind.scores.d_min),
            fmt(ind.scores.d_r_min),
            if sel { "*".into() } else { String::new() },
        ]);
    }
    write_text(&a.out_dir.join("front.csv"), &front)?;

    let mut trace = String::from("generation,best_r_max,best_d_min,front_size,evaluations\n");
    for g in &outcome.trace {
        writeln!(
            trace,
            "{},{},{},{},{}",
            g.generation, g.best_r, -g.best_neg_d, g.front_size, g.evaluations
        )
        .unwrap();
    }
    write_text(&a.out_dir.join("trace.csv"), &trace)?;
    io::write_pattern(&a.out_dir.join("selected.txt"), &selected)?;

    print_table(csv, &["bits", "open", "r_max", "d_min", "d_r_min", "selected"], &rows);
    if !csv {
        println!("\nselected pattern:\n{}", selected.to_text());
    }
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    check_sigma(a.sigma)?;
    let img = match (&a.image, a.dead_leaves) {
        (Some(p), _) => io::read_pgm(p)?,
        (None, Some(n)) if n > 0 => corpus::dead_leaves(n, n, a.seed),
        _ => return Err(usage("--dead-leaves needs a positive size")),
    };
    let (w, h) = img.dims();
    let source = Source::load(&a.kernel)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);

    if let (Some(dir), Some(scales), Some(sigmas)) = (&a.out_dir, &a.scales, &a.sigmas) {
        let scales = scales_arg(scales)?;
        let sigmas = sigmas_arg(sigmas)?;
        create_dir(dir)?;
        let mut index = String::from("file,scale,sigma\n");
        for &n in &sigmas {
            for &s in &scales {
                let out = blur(&img, &source.psf(s)?, n, &mut rng)?;
                let name = batch_file(s, n);
                io::write_pgm(&dir.join(&name), &out)?;
                writeln!(index, "{name},{s},{n}").unwrap();
            }
        }
        return write_text(&dir.join("index.csv"), &index);
    }

    let out_path = a
        .out
        .as_ref()
        .ok_or_else(|| usage("--out is required without --out-dir"))?;
    let s = a
        .scale
        .ok_or_else(|| usage("--scale is required for a single simulation"))?;
    let left = blur(&img, &source.psf(s)?, a.sigma, &mut rng)?;
    let (out, truth) = match a.region_scale {
        None => (left, DepthMap::constant(w, h, s)),
        Some(s2) => {
            let split = a.split.unwrap_or(w / 2);
            if split == 0 || split >= w {
                return Err(usage(format!("--split must be inside 1..{w}")));
            }
            let right = blur(&img, &source.psf(s2)?, a.sigma, &mut rng)?;
            let composite = Image::from_fn(w, h, |x, y| if x < split { left.get(x, y) } else { right.get(x, y) })?;
            let labels = (0..w * h).map(|i| usize::from(i % w >= split)).collect();
            (composite, DepthMap::new(w, h, labels, vec![s, s2])?)
        }
    };
    create_parent(out_path)?;
    io::write_pgm(out_path, &out)?;
    io::write_scale_map(&truth_path(out_path), &truth)?;
    Ok(())
}

fn depth_cmd(a: &DepthArgs, csv: bool) -> Result<()> {
    check_sigma(a.sigma)?;
    let params = MrfParams {
        lambda0: a.mrf.lambda0,
        sigma_lambda: a.mrf.sigma_lambda,
        gauss_std: a.mrf.gauss_std,
        ..MrfParams::default()
    };
    params.validate().map_err(|e| usage(e.to_string()))?;
    let scales = a.scales.as_deref().map(scales_arg).transpose()?;
    let img = io::read_pgm(&a.image)?;
    let bank = Source::load(&a.kernel)?.bank(scales.as_deref())?;

    let c = nsr_for(a.patch, a.patch, bank.max_side(), a.sigma)?;
    let volume = depth::raw_depth_volume(&img, &bank, &c, a.patch, a.stride)?;
    let data = depth::data_term(&volume, &params)?;
    let map = depth::solve_mrf(&data, &img, &params)?;
    let (w, h) = map.dims();
    let raw = DepthMap::new(w, h, volume.argmax_labels(), volume.scales().to_vec())?;

    create_dir(&a.out_dir)?;
    io::write_scale_map(&a.out_dir.join("depth.txt"), &map)?;
    io::write_label_pgm(&a.out_dir.join("depth_labels.pgm"), w, h, map.labels())?;
    io::write_scale_map(&a.out_dir.join("raw.txt"), &raw)?;

    let mut counts = vec![0usize; map.legend().len()];
    for &l in map.labels() {
        counts[l] += 1;
    }
    let rows: Vec<Vec<String>> = map
        .legend()
        .iter()
        .zip(&counts)
        .enumerate()
        .filter(|(_, (_, &n))| n > 0)
        .map(|(label, (s, n))| vec![label.to_string(), s.to_string(), n.to_string()])
        .collect();
    print_table(csv, &["label", "scale", "pixels"], &rows);
    if !csv {
        println!("modal scale: {}", map.modal_scale());
    }
    Ok(())
}

fn deconv_config(s: &SolverArgs) -> Result<DeconvConfig> {
    check_sigma(s.sigma)?;
    let cfg = DeconvConfig {
        method: s.method.parse::<DeconvMethod>().map_err(|e| usage(e.to_string()))?,
        reg_weight: s.reg,
        irls_iters: s.irls,
        cg_iters: s.cg,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn deblur(a: &DeblurArgs) -> Result<()> {
    let cfg = deconv_config(&a.solver)?;
    let img = io::read_pgm(&a.image)?;
    let (w, h) = img.dims();
    let source = Source::load(&a.kernel)?;
    let out = match (a.scale, &a.depth) {
        (Some(s), _) => {
            let psf = source.psf(s)?;
            let c = nsr_for(w, h, psf.side(), a.solver.sigma)?;
            deconv::deblur(&img, &psf, &cfg, &c)?
        }
        (None, Some(path)) => {
            let map = io::read_scale_map(path)?;
            let bank = source.bank(Some(map.legend()))?;
            let c = nsr_for(w, h, bank.max_side(), a.solver.sigma)?;
            deconv::deblur_with_depthmap(&img, &map, &bank, &cfg, &c)?
        }
        (None, None) => return Err(usage("one of --scale or --depth is required")),
    };
    create_parent(&a.out)?;
    io::write_pgm(&a.out, &out)?;
    Ok(())
}

fn quality(a: &QualityArgs, csv: bool) -> Result<()> {
    check_sigma(a.sigma)?;
    let blurred = io::read_pgm(&a.blurred)?;
    let header = [
        "candidate",
        "norm_sparsity",
        "sparsity_prior",
        "sharpness_index",
        "pyramid_ring",
        "aggregate",
    ];
    let row = |name: String, r: aperture_forge::quality::QualityReport| {
        vec![
            name,
            fmt(r.norm_sparsity),
            fmt(r.sparsity_prior),
            fmt(r.sharpness_index),
            fmt(r.pyramid_ring),
            fmt(r.aggregate),
        ]
    };
    if let Some(path) = &a.deblurred {
        let deblurred = io::read_pgm(path)?;
        let r = aggregate_quality(&blurred, &deblurred)?;
        print_table(csv, &header, &[row(path.display().to_string(), r)]);
        return Ok(());
    }
    let scales = scales_arg(a.scales.as_deref().expect("clap requires --deblurred or --scales"))?;
    let bank = Source::load(&a.kernel)?.bank(Some(&scales))?;
    let (w, h) = blurred.dims();
    let c = nsr_for(w, h, bank.max_side(), a.sigma)?;
    let mut rows = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0);
    for psf in bank.entries() {
        let r = aggregate_quality(&blurred, &deconv::wiener(&blurred, psf, &c)?)?;
        if r.aggregate > best.0 {
            best = (r.aggregate, psf.scale().get());
        }
        rows.push(row(format!("s={}", psf.scale().get()), r));
    }
    print_table(csv, &header, &rows);
    if !csv {
        println!("best scale: {}", best.1);
    }
    Ok(())
}

fn prior(a: &PriorArgs) -> Result<()> {
    if a.size == 0 {
        return Err(usage("--size must be positive"));
    }
    let images = if a.images.is_empty() {
        corpus::bundled(a.size)
    } else {
        a.images
            .iter()
            .map(|p| io::read_pgm(p))
            .collect::<aperture_forge::Result<Vec<_>>>()?
    };
    let prior = estimate_prior(&images, a.size, a.size)?;
    create_parent(&a.out)?;
    io::write_prior(&a.out, &prior)?;
    Ok(())
}

use std::path::Path;
use std::time::Instant;

use flexq_core::bitgemm::{config_for, prepare};
use flexq_core::format::{decode, encode, FlxqObject};
use flexq_core::layout_sim::{golden_check, simulate, LayoutSpec, MemModel};
use flexq_core::quantizer::{quantize_with, GroupAxis, QuantOptions, ScaleStorage};
use flexq_core::sensitivity::fixtures::{glu_fixture, GluFixtureOptions};
use flexq_core::sensitivity::{assign_policy, load_dump_dir, rank_layers_on, DumpEntry, MANIFEST_FILE};
use flexq_core::{
    decompose, execute_tiled, int_matmul_reference, pack as pack_planes, BitPolicy, FloatTensor, GemmConfig,
    PackConfig, QuantTensor,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::{manifest_path_for, resolve_output, Run};
use crate::{
    Axis, Distribution, GemmArgs, GenFixtureArgs, GenTensorArgs, LayoutArgs, PackArgs, QuantizeArgs, Role,
    SensitivityArgs,
};

/// Parses JSON, reporting the failing location as a JSON pointer.
pub fn parse_json<T: DeserializeOwned>(bytes: &[u8], what: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = json_pointer(e.path());
        CliError::Json {
            context: format!("{what} at {}", if pointer.is_empty() { "/" } else { &pointer }),
            message: e.into_inner().to_string(),
        }
    })
}

/// Layout specs are internally tagged by `kind`; the tag is dispatched by
/// hand so the body is deserialized directly and errors keep their path.
pub fn parse_layout_spec(bytes: &[u8]) -> CliResult<LayoutSpec> {
    use flexq_core::layout_sim::{ChunkDims, ChunkedDims, NaiveDims};

    #[derive(serde::Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Naive {
        bits: u32,
        dims: NaiveDims,
    }

    #[derive(serde::Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Chunked {
        bits: u32,
        dims: ChunkedDims,
        #[serde(default)]
        chunk: Option<ChunkDims>,
        #[serde(default)]
        zero_fill: bool,
    }

    let mut value: serde_json::Value = parse_json(bytes, "layout spec")?;
    let kind = match value.as_object_mut().map(|o| o.remove("kind")) {
        Some(Some(serde_json::Value::String(k))) => k,
        Some(_) => {
            return Err(CliError::Json {
                context: "layout spec at /kind".into(),
                message: "missing or non-string `kind` (expected \"naive\" or \"chunked\")".into(),
            })
        }
        None => {
            return Err(CliError::Json { context: "layout spec at /".into(), message: "expected an object".into() })
        }
    };
    let body = serde_json::to_vec(&value)?;
    match kind.as_str() {
        "naive" => {
            let n: Naive = parse_json(&body, "layout spec")?;
            Ok(LayoutSpec::Naive { bits: n.bits, dims: n.dims })
        }
        "chunked" => {
            let c: Chunked = parse_json(&body, "layout spec")?;
            Ok(LayoutSpec::Chunked { bits: c.bits, dims: c.dims, chunk: c.chunk, zero_fill: c.zero_fill })
        }
        other => Err(CliError::Json {
            context: "layout spec at /kind".into(),
            message: format!("unknown kind {other:?} (expected \"naive\" or \"chunked\")"),
        }),
    }
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
pub fn emit(text: &str) -> CliResult<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(CliError::File { path: "<stdout>".into(), source: e })
        }
        _ => Ok(()),
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

pub fn load_object(run: &mut Run, path: &Path) -> CliResult<FlxqObject> {
    let bytes = run.read_input(path)?;
    decode(&bytes).map_err(|e| match e {
        flexq_core::Error::Format { offset, message } => {
            flexq_core::Error::Format { offset, message: format!("{}: {message}", path.display()) }.into()
        }
        other => other.into(),
    })
}

fn expect_float(obj: FlxqObject, path: &Path) -> CliResult<FloatTensor> {
    match obj {
        FlxqObject::Float(t) => Ok(t),
        other => {
            Err(CliError::usage(format!("{}: expected a float tensor, found a {}", path.display(), other.kind_name())))
        }
    }
}

fn workers_or_all(workers: usize) -> usize {
    if workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        workers
    }
}

pub fn generate_tensor(a: &GenTensorArgs) -> CliResult<()> {
    use rand_distr::{Distribution as _, Normal, StudentT, Uniform};
    let mut run = Run::start("generate tensor", a);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let n = a.rows * a.cols;
    let data: Vec<f32> = match a.dist {
        Distribution::Normal => {
            let d = Normal::new(0.0f32, 1.0).expect("unit normal");
            (0..n).map(|_| d.sample(&mut rng) * a.scale).collect()
        }
        Distribution::Uniform => {
            let d = Uniform::new(-1.0f32, 1.0).expect("unit interval");
            (0..n).map(|_| d.sample(&mut rng) * a.scale).collect()
        }
        Distribution::StudentT => {
            let d = StudentT::new(3.0f32).expect("three degrees of freedom");
            (0..n).map(|_| d.sample(&mut rng) * a.scale).collect()
        }
    };
    let t = FloatTensor::new(data, a.rows, a.cols)?;
    let out = resolve_output(&a.out);
    run.write_output(&out, &encode(&FlxqObject::Float(t)))?;
    run.finish(&manifest_path_for(&out, false))?;
    Ok(())
}

pub fn generate_fixture(a: &GenFixtureArgs) -> CliResult<()> {
    let mut run = Run::start("generate glu-fixture", a);
    let opts = GluFixtureOptions { tokens: a.tokens, ..GluFixtureOptions::default() };
    let dumps = glu_fixture(a.seed, &opts)?;
    let dir = resolve_output(&a.out);
    let mut entries = Vec::new();
    for d in &dumps {
        let entry = DumpEntry {
            layer_name: d.layer_name.clone(),
            kind: d.layer_kind,
            weight_file: format!("{}.weight.flxq", d.layer_name),
            act_file: format!("{}.act.flxq", d.layer_name),
        };
        run.write_output(&dir.join(&entry.weight_file), &encode(&FlxqObject::Float(d.weight().clone())))?;
        run.write_output(&dir.join(&entry.act_file), &encode(&FlxqObject::Float(d.activations().clone())))?;
        entries.push(entry);
    }
    run.write_json_output(&dir.join(MANIFEST_FILE), &entries)?;
    run.finish(&manifest_path_for(&dir, true))?;
    Ok(())
}

fn resolve_bits(a: &QuantizeArgs, run: &mut Run) -> CliResult<u8> {
    let Some(kind) = a.layer_kind else {
        return Ok(a.bits.unwrap_or(6));
    };
    let policy = match &a.policy {
        Some(p) => {
            let policy: BitPolicy = parse_json(&run.read_input(p)?, "policy")?;
            policy.validate()?;
            policy
        }
        None => BitPolicy::default(),
    };
    Ok(match a.role {
        Role::Weight => policy.weight_bits,
        Role::Activation => match &a.layer_name {
            Some(name) => policy.for_layer(name, kind)?,
            None => flexq_core::activation_bits(kind, &policy)?,
        },
    })
}

pub fn quantize(a: &QuantizeArgs) -> CliResult<()> {
    let mut run = Run::start("quantize", a);
    let bits = resolve_bits(a, &mut run)?;
    let t = expect_float(load_object(&mut run, &a.input)?, &a.input)?;
    let opts = QuantOptions {
        bits,
        group_size: a.group,
        axis: match a.axis {
            Axis::Cols => GroupAxis::Cols,
            Axis::Rows => GroupAxis::Rows,
        },
        scale_storage: if a.f16_scales { ScaleStorage::F16 } else { ScaleStorage::Full },
    };
    let q = quantize_with(&t, &opts)?;
    let out = resolve_output(&a.out);
    run.write_output(&out, &encode(&FlxqObject::Quant(q)))?;
    run.set_metrics(&serde_json::json!({ "resolved_bits": bits }));
    run.finish(&manifest_path_for(&out, false))?;
    Ok(())
}

pub fn pack(a: &PackArgs) -> CliResult<()> {
    let mut run = Run::start("pack", a);
    let q = match load_object(&mut run, &a.input)? {
        FlxqObject::Quant(q) => q,
        other => {
            return Err(CliError::usage(format!(
                "{}: expected a quant tensor, found a {}",
                a.input.display(),
                other.kind_name()
            )))
        }
    };
    let cfg = match a.role {
        Role::Weight => PackConfig::for_weights(),
        Role::Activation => PackConfig::for_activations(q.rows()),
    }
    .with_word_bits(a.word_bits);
    let packed = pack_planes(&decompose(&q), &cfg)?;
    let out = resolve_output(&a.out);
    run.set_metrics(&serde_json::json!({ "words": packed.words().len(), "logical_shape": packed.logical_shape() }));
    run.write_output(&out, &encode(&FlxqObject::Packed(packed)))?;
    run.finish(&manifest_path_for(&out, false))?;
    Ok(())
}

fn load_operand(run: &mut Run, path: &Path, bits: u8, group: usize, name: &str) -> CliResult<QuantTensor> {
    match load_object(run, path)? {
        FlxqObject::Quant(q) => {
            if q.group_axis() != GroupAxis::Cols {
                return Err(CliError::usage(format!(
                    "{name} {}: groups run along rows; the engine needs groups along K (columns)",
                    path.display()
                )));
            }
            Ok(q)
        }
        FlxqObject::Float(t) => Ok(flexq_core::quantize(&t, bits, group)?),
        FlxqObject::Packed(_) => Err(CliError::usage(format!(
            "{name} {}: packed tensors carry no scales; pass the quant tensor instead",
            path.display()
        ))),
    }
}

#[derive(Serialize)]
struct GemmSummary {
    m: usize,
    n: usize,
    k: usize,
    weight_bits: u8,
    activation_bits: u8,
    group_size: usize,
    engine: &'static str,
    bmma_passes: u64,
    chunk_pair_segments: u64,
    wall_ns: u64,
    effective_gops: f64,
}

pub fn gemm(a: &GemmArgs) -> CliResult<()> {
    let mut run = Run::start("gemm", a);
    let wq = load_operand(&mut run, &a.weights, a.weight_bits, a.group, "weights")?;
    let xq = load_operand(&mut run, &a.acts, a.act_bits, a.group, "activations")?;
    if wq.cols() != xq.cols() || wq.group_size() != xq.group_size() {
        return Err(CliError::usage(format!(
            "weights {} are {}x{} (group {}) but activations {} are {}x{} (group {}); K and group size must match",
            a.weights.display(),
            wq.rows(),
            wq.cols(),
            wq.group_size(),
            a.acts.display(),
            xq.rows(),
            xq.cols(),
            xq.group_size()
        )));
    }
    let mut cfg: GemmConfig = config_for(&wq, &xq).with_pipeline(a.stages, workers_or_all(a.workers));
    if let Some((bm, bn, bk)) = a.tiles {
        cfg = cfg.with_tiles(bm, bn, bk);
    }
    cfg.validate()?;

    let clock = Instant::now();
    let (out, engine) = if a.oracle {
        (int_matmul_reference(&wq, &xq, &cfg)?, "reference")
    } else {
        let ops = prepare(&wq, &xq, 64)?;
        (execute_tiled(&ops.weights, &ops.activations, &ops.w_scales, &ops.x_scales, &cfg)?, "bit-serial")
    };
    let wall_ns = clock.elapsed().as_nanos() as u64;
    let summary = GemmSummary {
        m: cfg.m,
        n: cfg.n,
        k: cfg.k,
        weight_bits: cfg.weight_bits,
        activation_bits: cfg.activation_bits,
        group_size: cfg.group_size,
        engine,
        bmma_passes: out.stats.bmma_passes,
        chunk_pair_segments: out.stats.chunk_pair_segments,
        wall_ns,
        effective_gops: 2.0 * (cfg.m * cfg.n * cfg.k) as f64 / wall_ns.max(1) as f64,
    };
    emit(&serde_json::to_string(&summary)?)?;

    if let Some(path) = &a.out {
        let y = FloatTensor::new(out.data, out.m, out.n)?;
        let path = resolve_output(path);
        run.write_output(&path, &encode(&FlxqObject::Float(y)))?;
        run.set_metrics(&summary);
        run.finish(&manifest_path_for(&path, false))?;
    }
    Ok(())
}

pub fn layout(a: &LayoutArgs) -> CliResult<()> {
    let mut run = Run::start("layout", a);
    let model = match &a.model {
        Some(p) => {
            let m: MemModel = parse_json(&run.read_input(p)?, "memory model")?;
            m.validate()?;
            m
        }
        None => MemModel::default(),
    };

    let (report, failed) = if a.mode.golden {
        let results = golden_check(&model)?;
        let failed: Vec<String> = results
            .iter()
            .filter(|g| !g.pass)
            .map(|g| format!("{} = {} (expected {})", g.name, g.utilization, g.expected))
            .collect();
        (serde_json::to_value(&results)?, failed)
    } else {
        let path = a.mode.spec.as_ref().expect("clap requires --spec or --golden");
        let spec = parse_layout_spec(&run.read_input(path)?)?;
        let report = simulate(&spec.pattern(&model)?, &model)?;
        (serde_json::to_value(&report)?, Vec::new())
    };

    match &a.out {
        Some(p) => {
            let p = resolve_output(p);
            run.write_json_output(&p, &report)?;
            run.finish(&manifest_path_for(&p, false))?;
        }
        None => emit(&serde_json::to_string_pretty(&report)?)?,
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(format!("golden utilization mismatch: {}", failed.join("; "))))
    }
}

pub fn sensitivity(a: &SensitivityArgs) -> CliResult<()> {
    let mut run = Run::start("sensitivity", a);
    let manifest = a.dir.join(MANIFEST_FILE);
    let entries: Vec<DumpEntry> = parse_json(&run.read_input(&manifest)?, "dump manifest")?;
    for e in &entries {
        run.read_input(&a.dir.join(&e.weight_file))?;
        run.read_input(&a.dir.join(&e.act_file))?;
    }
    let dumps = load_dump_dir(&a.dir)?;
    let report = rank_layers_on(&dumps, a.weight_bits, a.act_bits, a.group, workers_or_all(a.workers))?;
    let policy = assign_policy(&report, a.high_bits, a.budget)?;

    let mut primary = None;
    if let Some(p) = &a.out {
        let p = resolve_output(p);
        run.write_json_output(&p, &report)?;
        primary = Some(p);
    } else {
        emit(&serde_json::to_string_pretty(&report)?)?;
    }
    if let Some(p) = &a.policy_out {
        let p = resolve_output(p);
        run.write_json_output(&p, &policy)?;
        primary.get_or_insert(p);
    }
    if let Some(p) = primary {
        run.set_metrics(&serde_json::json!({ "ranking": report.ranking }));
        run.finish(&manifest_path_for(&p, false))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_errors_carry_a_pointer() {
        let bad = br#"{"kind": "naive", "dims": {"rows": 4, "cols": "x"}, "bits": 6}"#;
        let err = parse_layout_spec(bad).unwrap_err().to_string();
        assert!(err.contains("layout spec at /dims/cols"), "{err}");
        let err = parse_layout_spec(br#"{"kind": "tiled", "bits": 6}"#).unwrap_err().to_string();
        assert!(err.contains("/kind"), "{err}");
        let err = parse_layout_spec(br#"{"kind": "chunked", "bits": 6, "dims": {"bm": 2, "bk": 128}, "extra": 1}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("extra"), "{err}");
    }

    #[test]
    fn spec_parses_both_kinds() {
        let naive = parse_layout_spec(br#"{"kind": "naive", "bits": 16, "dims": {"rows": 8, "cols": 64}}"#).unwrap();
        assert!(matches!(naive, LayoutSpec::Naive { bits: 16, .. }));
        let chunked = parse_layout_spec(br#"{"bits": 8, "kind": "chunked", "dims": {"bm": 8, "bk": 512}}"#).unwrap();
        assert!(matches!(chunked, LayoutSpec::Chunked { bits: 8, zero_fill: false, .. }));
    }

    #[test]
    fn pointer_escapes_keys() {
        let bad = br#"{"weight_bits": 6, "activation_bits_by_kind": {"a/b": 6}}"#;
        let err = parse_json::<BitPolicy>(bad, "policy").unwrap_err().to_string();
        assert!(err.contains("policy at /activation_bits_by_kind"), "{err}");
    }
}

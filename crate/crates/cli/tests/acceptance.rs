//! Acceptance suite. Prints one line per criterion and exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use udfwh::exchange::{simulate_makespan, Layout, OutBuffer, TargetRing, TransferCostModel};
use udfwh::ids::ProcessId;
use udfwh::packages::{Constraint, PackageRequest, RepositoryManifest, RequestKey, SolverCache};
use udfwh::presets;
use udfwh::sandbox::{
    Clause, Decision, EgressPolicy, EvalContext, Intent, SandboxPolicy, SupervisorLog, SyscallPolicy, SyscallRule,
};
use udfwh::scheduler::{estimate_from_history, MIB};
use udfwh::skew::zipf_partitions;
use udfwh::warehouse::RunConfig;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn in_band(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

fn c1_latency_bands() -> Outcome {
    let p = presets::latency_probe(&RunConfig::default()).map_err(|e| e.to_string())?;
    check(
        (p.cold_ms, p.solver_hit_ms, p.env_hit_ms) == (4100, 600, 100),
        format!(
            "latencies {}/{}/{} ms, want 4100/600/100",
            p.cold_ms, p.solver_hit_ms, p.env_hit_ms
        ),
    )?;
    check(
        in_band(p.solver_reduction, 0.80, 0.90),
        format!("solver reduction {:.4}", p.solver_reduction),
    )?;
    check(
        in_band(p.env_reduction, 0.65, 0.85),
        format!("env reduction {:.4}", p.env_reduction),
    )?;
    check(in_band(p.speedup, 18.0, 48.0), format!("speedup {:.2}", p.speedup))?;
    Ok(format!(
        "init {}/{}/{} ms, reductions {:.4} and {:.4}, speedup {:.1}x",
        p.cold_ms, p.solver_hit_ms, p.env_hit_ms, p.solver_reduction, p.env_reduction, p.speedup
    ))
}

fn c2_hit_rate() -> Outcome {
    let b = presets::bench_cache(&RunConfig::default()).map_err(|e| e.to_string())?;
    let c = &b.metrics.solver_cache;
    check(
        b.metrics.queries == 1000 && b.distinct_keys == 20,
        "replay shape is not 1000 queries over 20 keys",
    )?;
    check(c.hits == 980, format!("solver hits {}, want 980", c.hits))?;

    let mut m = RepositoryManifest::new();
    for i in 0..6 {
        m = m
            .with(&format!("r{i}"), "1.0", 1, vec![])
            .with(&format!("r{i}"), "2.0", 1, vec![]);
    }
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cache = SolverCache::new();
        let mut distinct = BTreeSet::new();
        let lookups = rng.gen_range(1..300u64);
        for _ in 0..lookups {
            let reqs: Vec<PackageRequest> = (0..rng.gen_range(1..4))
                .map(|_| {
                    let c = if rng.gen_bool(0.5) {
                        Constraint::Any
                    } else {
                        Constraint::AtLeast("1.0".parse().unwrap())
                    };
                    PackageRequest::new(&format!("r{}", rng.gen_range(0..6)), c).unwrap()
                })
                .collect();
            distinct.insert(RequestKey::new(&reqs));
            cache.lookup_or_resolve(&reqs, &m).map_err(|e| e.to_string())?;
        }
        let got = cache.counters().hits;
        check(
            got == lookups - distinct.len() as u64,
            format!("seed {seed}: hits {got}"),
        )?;
    }
    Ok(format!(
        "hits {} of {} (rate {:.2}); hits = lookups - distinct over 100 seeds",
        c.hits, b.metrics.queries, c.hit_rate
    ))
}

/// Sorts the window and takes the ceil(p·n)-th smallest, all in integer hundredths.
fn sorted_oracle(history: &[u64], k: usize, p_hundredths: u64, f_hundredths: u64) -> Option<u64> {
    let mut w = history[history.len().saturating_sub(k)..].to_vec();
    if w.is_empty() {
        return None;
    }
    w.sort_unstable();
    let rank = (p_hundredths * w.len() as u64).div_ceil(10_000).max(1) as usize;
    Some((w[rank - 1] as u128 * f_hundredths as u128).div_ceil(100).max(1) as u64)
}

fn c3_estimator() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let history: Vec<u64> = (0..rng.gen_range(0..40))
            .map(|_| rng.gen_range(0..1u64 << 40))
            .collect();
        let k = rng.gen_range(1..25);
        let p = rng.gen_range(1..=10_000u64);
        let f = rng.gen_range(100..=300u64);
        let got = estimate_from_history(&history, k, p as f64 / 100.0, f as f64 / 100.0);
        let want = sorted_oracle(&history, k, p, f);
        check(got == want, format!("case {case}: got {got:?}, oracle {want:?}"))?;
    }
    let history: Vec<u64> = (90..=135).step_by(5).map(|mb| mb * MIB).collect();
    let got = estimate_from_history(&history, 10, 95.0, 1.2);
    check(got == Some(162 * MIB), format!("fixed vector gave {got:?}"))?;
    Ok("1000 random histories match the oracle; [90..135 MB] K=10 P=95 F=1.2 -> 162 MB".into())
}

fn c4_tradeoff() -> Outcome {
    let b = presets::bench_sched(&presets::sched_config()).map_err(|e| e.to_string())?;
    let arm = |n: &str| b.arm(n).ok_or(format!("missing arm {n}"));
    let (dynamic, mean, max) = (arm("dynamic")?, arm("static-mean")?, arm("static-max")?);
    check(
        dynamic.oom_after_warmup == 0,
        format!("dynamic OOMs after warm-up: {}", dynamic.oom_after_warmup),
    )?;
    check(
        mean.metrics.oom_rate >= 0.10,
        format!("static-mean OOM rate {:.4}", mean.metrics.oom_rate),
    )?;
    check(
        max.metrics.queue_wait_ms.total > dynamic.metrics.queue_wait_ms.total,
        format!(
            "static-max queue wait {} ms not above dynamic {} ms",
            max.metrics.queue_wait_ms.total, dynamic.metrics.queue_wait_ms.total
        ),
    )?;
    Ok(format!(
        "dynamic OOM after warm-up 0; static-mean OOM rate {:.3}; queue wait static-max {:.0} ms > dynamic {:.0} ms",
        mean.metrics.oom_rate, max.metrics.queue_wait_ms.total, dynamic.metrics.queue_wait_ms.total
    ))
}

fn c5_redistribution() -> Outcome {
    let procs = Layout::new(2, 4).processes();
    let cost = TransferCostModel {
        remote_batch_ms: 10.0,
        ser_us_per_row: 10.0,
    };
    let skewed = zipf_partitions(8, 2000, 1.2).map_err(|e| e.to_string())?;
    check(
        skewed == [857, 373, 229, 163, 124, 100, 83, 71],
        format!("zipf sizes {skewed:?}"),
    )?;
    let on = simulate_makespan(&skewed, &procs, 5.0, true, 100, &cost);
    let off = simulate_makespan(&skewed, &procs, 5.0, false, 100, &cost);
    check(
        (on.makespan_us, off.makespan_us) == (1_271_630, 1_620_000),
        format!("makespans {} / {} us", on.makespan_us, off.makespan_us),
    )?;
    let gain = 1.0 - on.makespan_us as f64 / off.makespan_us as f64;
    check(gain >= 0.20, format!("gain {gain:.4}"))?;

    let uniform = zipf_partitions(8, 2000, 0.0).map_err(|e| e.to_string())?;
    let u_on = simulate_makespan(&uniform, &procs, 5.0, true, 100, &cost);
    let u_off = simulate_makespan(&uniform, &procs, 5.0, false, 100, &cost);
    let ideal = simulate_makespan(&uniform, &procs, 5.0, true, 100, &TransferCostModel::zero());
    let p = u_on.busiest();
    let bound = ideal.makespan_us + u_on.remote_batches[&p] * 10_000 + u_on.rows[&p] * 10;
    check(
        u_on.makespan_us <= bound,
        format!("uniform forced-on {} us over bound {bound} us", u_on.makespan_us),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..10_000 {
        let n: u64 = rng.gen_range(0..2000);
        let m: u32 = rng.gen_range(1..33);
        let ring = TargetRing::new(Layout::new(1, m).processes());
        let mut counts = vec![0u64; m as usize];
        for i in 0..n {
            counts[ring.assign(i).process as usize] += 1;
        }
        let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
        check(spread <= 1, format!("N={n} m={m}: spread {spread}"))?;
    }

    for q in [1usize, 2, 8] {
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + q as u64);
            let targets = Layout::new(rng.gen_range(1..4), rng.gen_range(1..5)).processes();
            let rows: Vec<(ProcessId, u32)> = (0..rng.gen_range(0..400u32))
                .map(|r| (*targets.choose(&mut rng).unwrap(), r))
                .collect();
            conserve(&rows, rng.gen_range(1..16), q, &mut rng).map_err(|e| format!("Q={q} seed {seed}: {e}"))?;
        }
    }
    Ok(format!(
        "makespan {:.2} ms vs {:.2} ms (gain {:.4}); uniform forced-on {:.2} ms vs off {:.2} ms within bound; balance on 10000 pairs; conservation for Q in {{1,2,8}}",
        on.makespan_ms(),
        off.makespan_ms(),
        gain,
        u_on.makespan_ms(),
        u_off.makespan_ms()
    ))
}

/// Drives an OutBuffer with randomly ordered acknowledgments and checks that
/// every target receives exactly its rows, in order, with at most `q` outstanding.
fn conserve(rows: &[(ProcessId, u32)], b: usize, q: usize, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let mut buf = OutBuffer::new(b, q);
    let mut received: BTreeMap<ProcessId, Vec<u32>> = BTreeMap::new();
    let mut in_flight: Vec<ProcessId> = Vec::new();
    let mut i = 0;
    let mut flushed = false;
    loop {
        let sent = if !in_flight.is_empty() && (i >= rows.len() || rng.gen_bool(0.4)) {
            let k = rng.gen_range(0..in_flight.len());
            buf.acknowledge(in_flight.swap_remove(k))
        } else if i < rows.len() {
            let (t, r) = rows[i];
            i += 1;
            buf.submit(t, [r])
        } else if !flushed {
            flushed = true;
            buf.flush()
        } else {
            break;
        };
        for d in sent {
            if d.rows.len() > b {
                return Err(format!("batch of {} rows exceeds {b}", d.rows.len()));
            }
            received.entry(d.target).or_default().extend(d.rows);
            in_flight.push(d.target);
        }
        if in_flight.iter().any(|t| buf.outstanding(*t) > q) {
            return Err("outstanding batches exceed Q".into());
        }
    }
    if !buf.is_drained() {
        return Err("buffer not drained".into());
    }
    let mut expected: BTreeMap<ProcessId, Vec<u32>> = BTreeMap::new();
    for (t, r) in rows {
        expected.entry(*t).or_default().push(*r);
    }
    if received != expected {
        return Err("delivered rows differ from submitted rows".into());
    }
    Ok(())
}

const CALLS: [&str; 6] = ["read", "write", "open", "connect", "mmap", "ptrace"];
const HOSTS: [&str; 5] = [
    "api.example.com",
    "example.com",
    "a.b.example.com",
    "evil.com",
    "db.internal",
];
const EGRESS: [&str; 4] = [
    "*.example.com:443",
    "example.com:443",
    "db.internal:5432",
    "evil.com:80",
];
const ARG_VALUES: [&str; 8] = ["/tmp/x", "/etc/passwd", "/data/a", "ro", "rw", "10", "99999", "-1"];

fn random_policy(rng: &mut ChaCha8Rng) -> SandboxPolicy {
    let mut s = SyscallPolicy::new();
    for name in CALLS {
        let rule = match rng.gen_range(0..6) {
            0 => continue,
            1 => SyscallRule::Allow,
            2 => SyscallRule::Deny,
            3 => SyscallRule::Conditional(vec![Clause::Prefix {
                arg: "path".into(),
                value: "/tmp/".into(),
            }]),
            4 => SyscallRule::Conditional(vec![Clause::Range {
                arg: "len".into(),
                min: 0.0,
                max: 4096.0,
            }]),
            _ => SyscallRule::Conditional(vec![
                Clause::Exact {
                    arg: "flags".into(),
                    value: "ro".into(),
                },
                Clause::Prefix {
                    arg: "path".into(),
                    value: "/data".into(),
                },
            ]),
        };
        s = s.with_rule(name, rule);
    }
    let egress: Vec<&str> = (0..rng.gen_range(0..3)).map(|_| *EGRESS.choose(rng).unwrap()).collect();
    SandboxPolicy {
        syscalls: s,
        egress: EgressPolicy::parse(&egress).unwrap(),
    }
}

fn random_intent(rng: &mut ChaCha8Rng) -> Intent {
    if rng.gen_bool(0.6) {
        let mut args: Vec<(&str, &str)> = Vec::new();
        for k in ["path", "len", "flags"] {
            if rng.gen_bool(0.5) {
                args.push((k, ARG_VALUES.choose(rng).unwrap()));
            }
        }
        Intent::syscall(CALLS.choose(rng).unwrap(), &args)
    } else {
        Intent::egress(HOSTS.choose(rng).unwrap(), *[80u16, 443, 5432].choose(rng).unwrap())
    }
}

fn ctx(t: u64) -> EvalContext {
    EvalContext {
        timestamp_us: t,
        query_id: 1,
        process_id: ProcessId::new(0, 0),
    }
}

fn c6_sandbox_logging() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut total = 0;
    for seq in 0..1000 {
        let p = random_policy(&mut rng);
        let log = SupervisorLog::new();
        let mut denies = 0;
        for t in 0..rng.gen_range(0..40u64) {
            if p.evaluate(&random_intent(&mut rng), &log, ctx(t)) == Decision::Deny {
                denies += 1;
            }
        }
        check(
            log.len() == denies,
            format!("sequence {seq}: {denies} denies, {} log events", log.len()),
        )?;
        total += denies;
    }

    let log = SupervisorLog::new();
    let p = SandboxPolicy {
        syscalls: SyscallPolicy::new().allow(&["read", "write"]).with_rule(
            "open",
            SyscallRule::Conditional(vec![Clause::Prefix {
                arg: "path".into(),
                value: "/tmp/".into(),
            }]),
        ),
        egress: EgressPolicy::parse(&["*.example.com:443"]).unwrap(),
    };
    let vectors: [(Intent, Decision, usize); 5] = [
        (Intent::syscall("connect", &[]), Decision::Deny, 1),
        (Intent::syscall("open", &[("path", "/etc/passwd")]), Decision::Deny, 2),
        (Intent::syscall("read", &[]), Decision::Allow, 2),
        (Intent::egress("api.example.com", 443), Decision::Allow, 2),
        (Intent::egress("evil.com", 443), Decision::Deny, 3),
    ];
    for (i, (intent, want, logged)) in vectors.iter().enumerate() {
        let got = p.evaluate(intent, &log, ctx(i as u64));
        check(
            got == *want && log.len() == *logged,
            format!("fixed vector {i}: {got:?}, log {}", log.len()),
        )?;
    }
    let empty = SandboxPolicy::default();
    for (h, port) in [("api.example.com", 443), ("localhost", 80)] {
        check(
            empty.evaluate(&Intent::egress(h, port), &log, ctx(9)) == Decision::Deny,
            "empty policy allowed egress",
        )?;
    }
    Ok(format!(
        "1000 sequences, {total} denies all logged exactly once; fixed vectors hold"
    ))
}

fn c7_determinism() -> Outcome {
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/data");
    let run = || {
        let out = Command::new(env!("CARGO_BIN_EXE_udfwh"))
            .args(["run", "--seed", "11"])
            .args(["--manifest", &format!("{data}/manifest.json")])
            .args(["--policy", &format!("{data}/policy.json")])
            .args(["--workload", &format!("{data}/workload.json")])
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "run exited {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr)
            ));
        }
        Ok(out.stdout)
    };
    let (a, b) = (run()?, run()?);
    check(!a.is_empty() && a == b, "metrics documents differ between runs")?;
    Ok(format!(
        "two runs with seed 11 produced identical {}-byte documents",
        a.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Outcome); 7] = [
        (1, c1_latency_bands),
        (2, c2_hit_rate),
        (3, c3_estimator),
        (4, c4_tradeoff),
        (5, c5_redistribution),
        (6, c6_sandbox_logging),
        (7, c7_determinism),
    ];
    let start = Instant::now();
    let mut failed = 0;
    for (n, f) in criteria {
        match f() {
            Ok(detail) => println!("criterion {n}: PASS ({detail})"),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL ({why})");
            }
        }
    }
    println!(
        "acceptance: {}/7 passed in {:.1}s",
        7 - failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

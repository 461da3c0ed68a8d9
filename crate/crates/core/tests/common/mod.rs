#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use szzkit::fixture::{Fixture, FixtureBuilder};
use szzkit::gitio::CommitId;

pub const MAIN_V1: &str = "#include <stdio.h>\n\nint helper(int x)\n{\n    return x * 2;\n}\n\nint main(void)\n{\n    return helper(1);\n}\n";

pub fn lines_replace(text: &str, lineno: usize, new: &str) -> String {
    let mut ls: Vec<&str> = text.lines().collect();
    ls[lineno - 1] = new;
    ls.join("\n") + "\n"
}

fn util(v: u32) -> String {
    format!("int util(void)\n{{\n    return {v};\n}}\n")
}

/// c0..c9. main.c is touched by c1, c3, c6 and c9; c9 fixes the line c3 broke
/// and names c3 in a `Fixes:` trailer.
pub fn basic_builder() -> FixtureBuilder {
    let mut b = FixtureBuilder::new();
    b.commit("Add README", 1000, &[("README", Some("hello\n"))]);
    b.commit(
        "Add main and util",
        2000,
        &[("main.c", Some(MAIN_V1)), ("util.c", Some(&util(0)))],
    );
    b.commit("util: return 1", 3000, &[("util.c", Some(&util(1)))]);
    let v3 = lines_replace(MAIN_V1, 5, "    return x / 0;");
    b.commit("helper: change scaling", 4000, &[("main.c", Some(&v3))]);
    b.commit("README: greet the world", 5000, &[("README", Some("hello world\n"))]);
    b.commit("util: return 2", 6000, &[("util.c", Some(&util(2)))]);
    let v6 = lines_replace(&v3, 10, "    return helper(2);");
    b.commit("main: call helper with 2", 7000, &[("main.c", Some(&v6))]);
    b.commit(
        "Add check",
        8000,
        &[("check.c", Some("int check(void) { return 1; }\n"))],
    );
    b.commit("util: return 3", 9000, &[("util.c", Some(&util(3)))]);
    let ids = b.preview_ids().unwrap();
    let v9 = lines_replace(&v6, 5, "    return x * 2;");
    let msg = format!(
        "helper: fix division by zero\n\nThe scaling change divides by zero.\n\nFixes: {} (\"helper: change scaling\")\n",
        ids[3].short(12)
    );
    b.commit(&msg, 10000, &[("main.c", Some(&v9))]);
    b
}

pub fn basic() -> Fixture {
    basic_builder().build().unwrap()
}

/// f.c: a1 rewrites lines 2-4, a2 rewrites line 8, a3 deletes 2-4 and 8.
pub fn multi_deletion() -> Fixture {
    let base: String = (1..=10).map(|i| format!("line{i}\n")).collect();
    let mut b = FixtureBuilder::new();
    b.commit("base", 1000, &[("f.c", Some(&base))]);
    let mut v1 = base.clone();
    for i in 2..=4 {
        v1 = lines_replace(&v1, i, &format!("bug{i}"));
    }
    b.commit("rewrite 2-4", 2000, &[("f.c", Some(&v1))]);
    let v2 = lines_replace(&v1, 8, "bug8");
    b.commit("rewrite 8", 3000, &[("f.c", Some(&v2))]);
    let fixed: String = v2
        .lines()
        .enumerate()
        .filter(|(i, _)| ![1, 2, 3, 7].contains(i))
        .map(|(_, l)| format!("{l}\n"))
        .collect();
    b.commit("drop bad lines", 4000, &[("f.c", Some(&fixed))]);
    b.build().unwrap()
}

/// v1 adds a statement, v3 only re-indents it, v4 deletes it.
pub fn reindent() -> Fixture {
    let mut b = FixtureBuilder::new();
    b.commit("base", 1000, &[("f.c", Some("a\nb\nc\n"))]);
    b.commit("add compute", 2000, &[("f.c", Some("a\nb\n    value = compute();\nc\n"))]);
    b.commit("other", 3000, &[("g.c", Some("x\n"))]);
    b.commit(
        "reindent",
        4000,
        &[("f.c", Some("a\nb\n        value = compute();\nc\n"))],
    );
    b.commit("remove compute", 5000, &[("f.c", Some("a\nb\nc\n"))]);
    b.build().unwrap()
}

/// a.c is created (r0), edited (r1), renamed to b.c (r2), edited (r3); r4
/// deletes the line r1 added.
pub fn renamed() -> Fixture {
    let mut b = FixtureBuilder::new();
    b.commit("create a", 1000, &[("a.c", Some("one\ntwo\nthree\nfour\n"))]);
    b.commit("edit a", 2000, &[("a.c", Some("one\ntwo\nTHREE_BAD\nfour\n"))]);
    b.rename("move a to b", 3000, "a.c", "b.c", None);
    b.commit("edit b", 4000, &[("b.c", Some("one\ntwo\nTHREE_BAD\nfour\nfive\n"))]);
    b.commit("fix b", 5000, &[("b.c", Some("one\ntwo\nthree\nfour\nfive\n"))]);
    b.build().unwrap()
}

/// A random history plus, for its last commit, the commits that last wrote
/// each line the last commit deletes (computed by direct simulation).
pub struct RandomRepo {
    pub builder: FixtureBuilder,
    pub expected_szz: BTreeSet<usize>,
}

/// Every line written is unique, so the diff of each commit is exactly the
/// scripted edit and each line's last writer is unambiguous.
pub fn random_repo(seed: u64, max_commits: usize, max_files: usize) -> RandomRepo {
    let mut rng = StdRng::seed_from_u64(seed);
    let n_commits = rng.gen_range(2..=max_commits);
    let n_files = rng.gen_range(1..=max_files);
    // file -> lines of (content, writer index)
    let mut files: BTreeMap<String, Vec<(String, usize)>> = BTreeMap::new();
    let mut b = FixtureBuilder::new();
    let mut serial = 0usize;
    let mut expected = BTreeSet::new();
    for c in 0..n_commits {
        let is_fix = c == n_commits - 1 && c > 0;
        let touched: BTreeSet<usize> = if c == 0 {
            (0..n_files).collect()
        } else {
            (0..rng.gen_range(1..=n_files)).map(|_| rng.gen_range(0..n_files)).collect()
        };
        let mut writes = Vec::new();
        for f in touched {
            let name = format!("src/file{f}.c");
            let lines = files.entry(name.clone()).or_default();
            let ops = rng.gen_range(1..=4);
            for _ in 0..ops {
                let kind = if lines.is_empty() { 0 } else { rng.gen_range(0..3) };
                match kind {
                    0 => {
                        let at = rng.gen_range(0..=lines.len());
                        let k = rng.gen_range(1..=3);
                        for j in 0..k {
                            serial += 1;
                            lines.insert(at + j, (format!("stmt_{serial}_c{c};"), c));
                        }
                    }
                    1 => {
                        let at = rng.gen_range(0..lines.len());
                        let (_, w) = lines.remove(at);
                        // lines the fix itself wrote and dropped never reach the diff
                        if is_fix && w != c {
                            expected.insert(w);
                        }
                    }
                    _ => {
                        let at = rng.gen_range(0..lines.len());
                        serial += 1;
                        let old = std::mem::replace(&mut lines[at], (format!("stmt_{serial}_c{c};"), c));
                        if is_fix && old.1 != c {
                            expected.insert(old.1);
                        }
                    }
                }
            }
            let text: String = lines.iter().map(|(l, _)| format!("{l}\n")).collect();
            writes.push((name, text));
        }
        let refs: Vec<(&str, Option<&str>)> =
            writes.iter().map(|(n, t)| (n.as_str(), Some(t.as_str()))).collect();
        b.commit(&format!("commit {c}"), 1_000_000 + 60 * c as i64, &refs);
    }
    RandomRepo {
        builder: b,
        expected_szz: expected,
    }
}

pub fn ids_of(fx: &Fixture, idx: impl IntoIterator<Item = usize>) -> BTreeSet<CommitId> {
    idx.into_iter().map(|i| fx.id(i).clone()).collect()
}

/// Every hex run of length ≥ 7 in `text` that abbreviates one of `hashes`.
pub fn leaked_prefixes(text: &str, hashes: &BTreeSet<CommitId>) -> Vec<String> {
    let re = regex::Regex::new(r"[0-9a-fA-F]{7,}").unwrap();
    let mut out = Vec::new();
    for m in re.find_iter(text) {
        let run = m.as_str().to_ascii_lowercase();
        // any 7-char window of the run that starts a gt hash
        for start in 0..=run.len() - 7 {
            let w = &run[start..start + 7];
            if hashes.iter().any(|h| h.as_str().starts_with(w)) {
                out.push(m.as_str().to_string());
                break;
            }
        }
    }
    out
}

struct Capture;

thread_local! {
    static WARNINGS: std::cell::RefCell<Vec<String>> = const { std::cell::RefCell::new(Vec::new()) };
}

impl log::Log for Capture {
    fn enabled(&self, m: &log::Metadata) -> bool {
        m.level() <= log::Level::Warn
    }
    fn log(&self, r: &log::Record) {
        if r.level() == log::Level::Warn {
            WARNINGS.with(|w| w.borrow_mut().push(r.args().to_string()));
        }
    }
    fn flush(&self) {}
}

static CAPTURE: Capture = Capture;

/// Runs `f` and returns the warnings it logged on this thread.
pub fn with_warnings<T>(f: impl FnOnce() -> T) -> (T, Vec<String>) {
    let _ = log::set_logger(&CAPTURE);
    log::set_max_level(log::LevelFilter::Warn);
    WARNINGS.with(|w| w.borrow_mut().clear());
    let out = f();
    (out, WARNINGS.with(|w| w.borrow_mut().drain(..).collect()))
}

/// Two-sided p of W⁺ by enumerating all 2ⁿ sign vectors.
pub fn brute_wilcoxon_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w <= w_plus + 1e-9 {
            le += 1;
        }
        if w >= w_plus - 1e-9 {
            ge += 1;
        }
    }
    let total = (1u64 << n) as f64;
    (2.0 * (le.min(ge) as f64) / total).min(1.0)
}

/// Average ranks of |d| by direct counting, zero differences dropped.
pub fn brute_ranks(d: &[f64]) -> (Vec<f64>, f64) {
    let nz: Vec<f64> = d.iter().copied().filter(|x| *x != 0.0).collect();
    let ranks: Vec<f64> = nz
        .iter()
        .map(|x| {
            let below = nz.iter().filter(|y| y.abs() < x.abs()).count() as f64;
            let equal = nz.iter().filter(|y| y.abs() == x.abs()).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let w_plus = nz.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    (ranks, w_plus)
}

/// A finished session whose trace holds `calls` in order.
pub fn trace_with(
    session_id: &str,
    fix: Option<CommitId>,
    calls: &[(szzkit::agent::ToolKind, serde_json::Value)],
) -> szzkit::agent::SessionTrace {
    use szzkit::agent::{SessionResult, SessionTrace, StopReason, ToolCallRecord, UsageLedger};
    SessionTrace {
        session_id: session_id.to_string(),
        fix,
        pipeline: "SIMPLE_SZZ_AGENT".into(),
        role: "simple".into(),
        candidate_count: None,
        model: "scripted".into(),
        result: SessionResult {
            final_text: String::new(),
            trace: calls
                .iter()
                .enumerate()
                .map(|(i, (tool, args))| ToolCallRecord {
                    seq: i as u32 + 1,
                    tool: *tool,
                    args: args.clone(),
                    result_bytes: 0,
                    ok: true,
                    wall_ms: 0,
                })
                .collect(),
            transcript: Vec::new(),
            usage: UsageLedger::default(),
            stopped_by: StopReason::Final,
            turns: calls.len() as u32 + 1,
            error: None,
        },
    }
}

pub const DEMO_REPO: &str = "demo";

/// Tokens each scripted turn reports.
pub const DEMO_TURN_USAGE: szzkit::agent::TokenUsage = szzkit::agent::TokenUsage {
    input_tokens: 1000,
    output_tokens: 200,
    cache_tokens: 0,
};

pub struct Demo {
    pub ids: Vec<CommitId>,
    pub entries: Vec<szzkit::eval::DatasetEntry>,
    pub script: szzkit::agent::ScriptFile,
}

/// The basic history at `root/demo` with three fixes (c9, c6, c5) and a
/// script that greps, reads the right dump file, writes ANSWER.txt and answers.
pub fn demo_dataset(root: &std::path::Path) -> Demo {
    use szzkit::agent::{ScriptFile, ScriptTurn};
    let ids = basic_builder().build_at(&root.join(DEMO_REPO)).unwrap();
    // (fix, gt, ordinal of gt among the fix's candidates, grep pattern)
    let plan = [(9, 3, 1, "x / 0"), (6, 1, 0, "helper(1)"), (5, 2, 1, "return 1;")];
    let mut entries = Vec::new();
    let mut by_fix = BTreeMap::new();
    for (fix, gt, ord, pattern) in plan {
        entries.push(szzkit::eval::DatasetEntry {
            repo_id: DEMO_REPO.into(),
            fix: ids[fix].clone(),
            gt_bics: BTreeSet::from([ids[gt].clone()]),
            collected_at: None,
        });
        let file = format!("{ord:06}_{}.txt", ids[gt].short(12));
        by_fix.insert(
            ids[fix].as_str().to_string(),
            vec![
                ScriptTurn::tool("Grep", serde_json::json!({"pattern": pattern, "mode": "literal"})),
                ScriptTurn::tool("Read", serde_json::json!({"path": file})),
                ScriptTurn::tool("Write", serde_json::json!({"path": "ANSWER.txt", "content": format!("{}\n", ids[gt])})),
                ScriptTurn::text(format!("ANSWER: {}", ids[gt])),
            ],
        );
    }
    Demo {
        ids,
        entries,
        script: ScriptFile {
            model: "scripted-model".into(),
            usage: DEMO_TURN_USAGE,
            turns: Vec::new(),
            by_fix,
        },
    }
}

pub fn demo_prices() -> szzkit::agent::PriceTable {
    use std::str::FromStr;
    szzkit::agent::PriceTable::default().with(
        "scripted-model",
        szzkit::agent::ModelPrice {
            input: rust_decimal::Decimal::from_str("3").unwrap(),
            output: rust_decimal::Decimal::from_str("15").unwrap(),
            cache: rust_decimal::Decimal::ZERO,
        },
    )
}

/// Two-commit repo: `before` then the fix turning it into `after`.
pub fn two_step(path: &str, before: &str, after: &str, message: &str) -> Fixture {
    let mut b = FixtureBuilder::new();
    b.commit("introduce", 1000, &[(path, Some(before))]);
    b.commit(message, 2000, &[(path, Some(after))]);
    b.build().unwrap()
}

pub fn sleep_fixture() -> Fixture {
    let before = "static int foo_wait(struct foo *f)\n{\n\tfoo_kick(f);\n\tfsleep(10);\n\treturn foo_ready(f);\n}\n";
    let after = "static int foo_wait(struct foo *f)\n{\n\tfoo_kick(f);\n\tusleep_range(10, 20);\n\treturn foo_ready(f);\n}\n";
    two_step(
        "drivers/hwmon/foo.c",
        before,
        after,
        "hwmon: (foo) replace fsleep with usleep_range\n\nfsleep may sleep far too long here.\n",
    )
}

pub fn shift_fixture() -> Fixture {
    let before = "u32 blk_words(struct blk *blk)\n{\n\tu32 n;\n\n\tn = blk->size >> 2;\n\treturn n;\n}\n";
    let after = "u32 blk_words(struct blk *blk)\n{\n\tu32 n;\n\n\tn = DIV_ROUND_UP(blk->size, 4);\n\treturn n;\n}\n";
    two_step("fs/blk/words.c", before, after, "blk: round the word count up\n\nA trailing partial word was dropped.\n")
}

pub fn smc_fixture() -> Fixture {
    let body = |check: &str| {
        format!(
            "bool smc_ib_is_sg_need_sync(struct smc_link *lnk,\n\t\t\t    struct smc_buf_desc *buf_slot)\n{{\n\tstruct scatterlist *sg;\n\tunsigned int i;\n\tbool ret = false;\n\n\tfor_each_sg(buf_slot->sgt[lnk->link_idx].sgl, sg, buf_slot->sgt[lnk->link_idx].nents, i) {{\n\t\tif (!sg_dma_len(sg))\n\t\t\tbreak;\n\t\tif ({check})\n\t\t\tret = true;\n\t}}\n\treturn ret;\n}}\n"
        )
    };
    two_step(
        "net/smc/smc_ib.c",
        &body("dma_need_sync(lnk->smcibdev->ibdev->dma_device, sg_dma_address(sg))"),
        &body("dma_need_sync(lnk->smcibdev->ibdev->dma_device, sg_dma_address(sg)) && !ret"),
        "net/smc: stop scanning early in smc_ib_is_sg_need_sync()\n",
    )
}

/// `n` commits each appending a line to f.c, then a pure-addition fix.
pub fn long_history(n: usize) -> Fixture {
    let mut b = FixtureBuilder::new();
    let mut text = String::new();
    for i in 0..n {
        text.push_str(&format!("line {i}\n"));
        b.commit(&format!("step {i}"), 1000 + 10 * i as i64, &[("f.c", Some(&text))]);
    }
    text.push_str("guard();\n");
    b.commit("add guard", 1000 + 10 * n as i64, &[("f.c", Some(&text))]);
    b.build().unwrap()
}

//! Scenario scripts shared by integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod props;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use caseloop_core::fakes::ScriptedTransport;
use caseloop_core::gateway::{BackendProfile, ChatGateway, Transport};
use caseloop_core::parsers::UseCaseEdit;
use caseloop_core::runner::ProjectRunner;
use caseloop_core::session::{Services, Session, SessionConfig, SteppingClock};

pub const IRIS_TASK: &str = "develop a neural network classifier tool that allows users to input the characteristics of iris flowers and obtain classification results";

pub const IRIS_DRAFT: [&str; 4] = [
    "User can input the characteristics of iris flowers.",
    "User can submit the input data to the neural network classifier",
    "User can obtain the classification results.",
    "User can view the classification results in JSON format.",
];

pub const IRIS_BOARD: &str = "User can view the classification results on a board.";

pub const IRIS_MANUAL: [&str; 4] = [
    "User can input the characteristics of iris flowers. The input includes four characteristics: \"SepalLengthCm\", \"SepalWidthCm\", \"PetalLengthCm\", and \"PetalWidthCm\".",
    "User can submit the input data to the neural network classifier",
    "User can obtain the classification result.",
    "User can view the classification name of the iris flower on the board. The result should be the species name.",
];

pub const IRIS_DESIGN: &str = r#"{"main.py": "This is the main file of the neural network classifier tool.",
"classifier.py": "This file contains the implementation of the machine learning classification algorithm.",
"gui.py": "This file provides the graphical user interface for users to enter iris characteristics and view classification results.",
"utils.py": "This file contains utility functions used in the system."}"#;

pub const AIRPLANE_CRASH: &str = "Traceback (most recent call last):
  File \"main.py\", line 3, in <module>
    game.start_game()
  File \"game.py\", line 21, in start_game
    player.handle_input(player_airplane, bullets)
TypeError: handle_input() missing 1 required positional argument: 'canvas'";

pub const AIRPLANE_TASK: &str = "Airplane War Game";

pub fn fenced(name: &str, body: &str) -> String {
    format!("{name}\n```python\n{body}\n```")
}

pub fn files(list: &[(&str, &str)]) -> String {
    list.iter().map(|(n, b)| fenced(n, b)).collect::<Vec<_>>().join("\n\n")
}

pub fn use_case_json(list: &[&str]) -> String {
    let map: serde_json::Map<String, serde_json::Value> =
        list.iter().enumerate().map(|(i, d)| ((i + 1).to_string(), serde_json::Value::from(*d))).collect();
    serde_json::to_string_pretty(&map).unwrap()
}

pub fn iris_code(version: u32) -> String {
    let utils = if version == 1 {
        "def normalize(values):\n    pass"
    } else {
        "def normalize(values):\n    total = sum(values) or 1.0\n    return [v / total for v in values]"
    };
    files(&[
        ("main.py", "import gui\n\ngui.launch()"),
        ("classifier.py", "import utils\n\nSPECIES = ['setosa', 'versicolor', 'virginica']\n\n\ndef classify(features):\n    scaled = utils.normalize(features)\n    return SPECIES[int(scaled[2] * 10) % 3]"),
        ("gui.py", &format!("import classifier\n\n\ndef launch():\n    return classifier.classify([5.1, 3.5, 1.4, 0.2])  # v{version}")),
        ("utils.py", utils),
    ])
}

pub fn iris_unit_test(target: &str) -> String {
    let module = target.trim_end_matches(".py");
    fenced(
        &format!("test_{target}"),
        &format!("import unittest\n\nimport {module}\n\n\nclass Test{module}(unittest.TestCase):\n    def test_loads(self):\n        self.assertTrue({module})"),
    )
}

/// Model answers for the iris walkthrough: draft, design, code with one
/// placeholder, refinement, three unit-test files; then, after the manual
/// revision, design, code, and three regenerated test files.
pub fn iris_script() -> Vec<String> {
    let mut s = vec![
        format!("Here are the use cases:\n```json\n{}\n```", use_case_json(&IRIS_DRAFT)),
        IRIS_DESIGN.to_string(),
        iris_code(1),
        fenced(
            "utils.py",
            "def normalize(values):\n    total = sum(values) or 1.0\n    return [v / total for v in values]",
        ),
    ];
    for t in ["classifier.py", "gui.py", "utils.py"] {
        s.push(iris_unit_test(t));
    }
    s.push(IRIS_DESIGN.to_string());
    s.push(iris_code(2));
    for t in ["classifier.py", "gui.py", "utils.py"] {
        s.push(iris_unit_test(t));
    }
    s
}

/// Manual-testing revision turning the board wording into the detailed one.
pub fn iris_manual_edits() -> Vec<UseCaseEdit> {
    vec![
        UseCaseEdit::Modify { id: 1, description: IRIS_MANUAL[0].into() },
        UseCaseEdit::Modify { id: 3, description: IRIS_MANUAL[2].into() },
        UseCaseEdit::Modify { id: 4, description: IRIS_MANUAL[3].into() },
    ]
}

pub fn airplane_fixture(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/airplane").join(name);
    let text = std::fs::read_to_string(path).unwrap();
    text.strip_suffix('\n').unwrap_or(&text).to_string()
}

pub const AIRPLANE_PLAYER_FIXED: &str = "def handle_input(airplane, bullets, canvas=None):\n    if canvas is not None:\n        canvas.move(airplane, 0, -5)\n    bullets.append((airplane.x, airplane.y))";

/// Model answers for the airplane game run against the real interpreter:
/// the generated code crashes at start, one fix makes it start cleanly.
pub fn airplane_script() -> Vec<String> {
    vec![
        use_case_json(&[
            "User can move the airplane with the keyboard.",
            "User can fire bullets.",
            "User can see the score.",
        ]),
        r#"{"main.py": "Starts the game.", "game.py": "Game loop and objects.", "player.py": "Player input."}"#.to_string(),
        files(&[
            ("main.py", &airplane_fixture("main.py")),
            ("game.py", &airplane_fixture("game.py")),
            ("player.py", &airplane_fixture("player.py")),
        ]),
        fenced("test_game.py", "import unittest\n\nimport game\n\n\nclass TestGame(unittest.TestCase):\n    def test_make_bullets(self):\n        self.assertEqual(game.make_bullets(), [])\n\n    def test_airplane(self):\n        a = game.Airplane(1, 2)\n        self.assertEqual((a.x, a.y), (1, 2))"),
        fenced("test_player.py", "import unittest\n\nimport player\n\n\nclass Plane:\n    x = 3\n    y = 4\n\n\nclass Canvas:\n    def move(self, *args):\n        self.moved = args\n\n\nclass TestPlayer(unittest.TestCase):\n    def test_fire(self):\n        bullets = []\n        player.handle_input(Plane(), bullets, Canvas())\n        self.assertEqual(bullets, [(3, 4)])"),
        format!("The call in game.py omits the canvas.\n\n{}", fenced("player.py", AIRPLANE_PLAYER_FIXED)),
    ]
}

pub fn services(runner: Arc<dyn ProjectRunner>) -> Arc<Services> {
    Arc::new(Services::new(runner, Arc::new(SteppingClock::new(1_700_000_000_000, 1_000))))
}

pub fn scripted_gateway(answers: Vec<String>) -> (ChatGateway, Arc<ScriptedTransport>) {
    let transport = Arc::new(ScriptedTransport::new(answers));
    let t: Arc<dyn Transport> = transport.clone();
    (ChatGateway::new(BackendProfile::default(), t).unwrap(), transport)
}

pub fn replay_gateway(cassette: &Path) -> ChatGateway {
    let t: Arc<dyn Transport> = Arc::new(ScriptedTransport::default());
    ChatGateway::new(BackendProfile::replay(cassette), t).unwrap()
}

pub fn record_gateway(cassette: &Path, answers: Vec<String>) -> ChatGateway {
    let t: Arc<dyn Transport> = Arc::new(ScriptedTransport::new(answers));
    ChatGateway::new(BackendProfile::record(cassette), t).unwrap()
}

pub fn new_session(
    root: &Path,
    task: &str,
    config: SessionConfig,
    gateway: ChatGateway,
    runner: Arc<dyn ProjectRunner>,
) -> Session {
    Session::create(root, task, config, gateway, services(runner)).unwrap()
}

pub fn event_log(session: &Session) -> PathBuf {
    session.dir().join("events.jsonl")
}

/// Revision-table groups: (h1, h2, task count, average pass rate in percent).
pub const REVISION_GROUPS: [(u32, u32, usize, f64); 8] = [
    (0, 0, 1, 100.0),
    (0, 1, 1, 100.0),
    (1, 0, 14, 68.57),
    (1, 1, 8, 81.44),
    (1, 2, 12, 85.42),
    (1, 3, 11, 86.68),
    (1, 4, 9, 86.89),
    (1, 5, 16, 52.59),
];

/// 72 records reproducing the table: each task judges 10000 reference use
/// cases, passing exactly the group's percentage of them.
pub fn revision_group_records() -> Vec<caseloop_core::bench::EvalRecord> {
    use caseloop_core::bench::{EvalRecord, Verdict};
    let mut records = Vec::new();
    for (h1, h2, count, pct) in REVISION_GROUPS {
        let passed = (pct * 100.0).round() as usize;
        for i in 0..count {
            let mut verdicts = vec![Verdict::Pass; passed];
            verdicts.resize(10_000, Verdict::Fail);
            let mut r = EvalRecord::with_verdicts(format!("t{h1}{h2}-{i:02}"), verdicts).unwrap();
            (r.h1, r.h2) = (h1, h2);
            records.push(r);
        }
    }
    records
}

/// Is `x` the double nearest to `p / t`? Compared in exact integers
/// against both neighbours of `x`.
pub fn is_nearest_double(x: f64, p: u64, t: u64) -> bool {
    fn parts(d: f64) -> (u128, i32) {
        let bits = d.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i32;
        let mant = (bits & ((1 << 52) - 1)) | (1 << 52);
        (mant as u128, 1075 - exp)
    }
    if p == 0 || x == 0.0 {
        return p == 0 && x == 0.0;
    }
    let candidates = [x, f64::from_bits(x.to_bits().saturating_sub(1)), f64::from_bits(x.to_bits() + 1)];
    let scaled: Vec<(u128, i32)> = candidates.iter().map(|&d| parts(d)).collect();
    let k = scaled.iter().map(|&(_, k)| k).max().unwrap().max(0) as u32;
    let dist = |(m, kk): (u128, i32)| {
        let numer = m << (k as i32 - kk);
        (numer * t as u128).abs_diff((p as u128) << k)
    };
    let d0 = dist(scaled[0]);
    x >= 0.0 && d0 <= dist(scaled[1]) && d0 <= dist(scaled[2])
}

/// Runs one auto loop against a runner that always fails, with
/// `max_auto_iterations = max` and three spare fix answers queued. Returns the
/// loop outcome, the phase afterwards and the unused answer count.
pub fn exhaust_loop(
    stage: caseloop_core::session::LoopStage,
    max: u32,
    problems: &[String],
) -> (caseloop_core::autotest::LoopOutcome, caseloop_core::session::Phase, usize) {
    use caseloop_core::fakes::{crashed, ScriptedRunner};
    use caseloop_core::runner::{TestFailure, TestReport};
    use caseloop_core::session::{LoopStage, Phase};

    let root = tempfile::tempdir().unwrap();
    let runner = Arc::new(ScriptedRunner::new());
    let mut script = vec![
        use_case_json(&["User can start the app."]),
        r#"{"main.py": "entry", "calc.py": "math"}"#.to_string(),
        files(&[("main.py", "import calc"), ("calc.py", "X = 0")]),
        fenced("test_calc.py", "import calc"),
    ];
    let problem = |i: usize| problems[i % problems.len()].clone();
    for i in 0..max as usize + 3 {
        match stage {
            LoopStage::Unit => {
                let failure = TestFailure { test_id: "t".into(), message: problem(i) };
                runner.push_report(TestReport { total: 1, passed: 0, failures: vec![failure] });
                // unchanged calc.py keeps the generated test
                script.push(fenced("calc.py", "X = 0"));
            }
            LoopStage::System => {
                runner.push_entry(crashed(&problem(i)));
                script.push(fenced("main.py", &format!("import calc\nprint({i})")));
            }
        }
    }
    let (gw, transport) = scripted_gateway(script);
    let config = SessionConfig { max_auto_iterations: max, ..SessionConfig::default() };
    let mut s = new_session(root.path(), "calc", config, gw, runner);
    s.run_auto().unwrap();
    s.approve_use_cases().unwrap();
    let target = match stage {
        LoopStage::Unit => Phase::UnitTesting,
        LoopStage::System => Phase::SystemTesting,
    };
    while s.phase() != target {
        s.advance_auto().unwrap();
    }
    let out = match stage {
        LoopStage::Unit => s.unit_test_loop().unwrap(),
        LoopStage::System => s.system_test_loop().unwrap(),
    };
    (out, s.phase(), transport.remaining())
}

/// A fixture directory as a round-1 bundle, `main.*` first.
pub fn fixture_bundle(name: &str) -> caseloop_core::parsers::CodeBundle {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    let mut names: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort_by_key(|n| (!n.starts_with("main."), n.clone()));
    let files = names
        .iter()
        .map(|n| {
            let text = std::fs::read_to_string(dir.join(n)).unwrap();
            caseloop_core::parsers::CodeFile::new(n, "python", "", text.strip_suffix('\n').unwrap_or(&text))
        })
        .collect();
    caseloop_core::parsers::CodeBundle::new(files, 1)
}

/// Hash of every file under `dir` except those below `skip`.
pub fn tree_hash(dir: &Path, skip: &Path) -> String {
    use sha2::Digest;
    let mut entries = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.starts_with(skip) {
                continue;
            }
            if p.is_dir() {
                stack.push(p.clone());
                entries.insert(p.display().to_string(), Vec::new());
            } else {
                entries.insert(p.display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut h = sha2::Sha256::new();
    for (k, v) in entries {
        h.update(k.as_bytes());
        h.update(&v);
    }
    hex::encode(h.finalize())
}

pub const IRIS_CRASH: &str = "Traceback (most recent call last):
  File \"main.py\", line 3, in <module>
    gui.launch()
  File \"gui.py\", line 5, in launch
    return classifier.classify([5.1, 3.5, 1.4, 0.2])
TypeError: classify() missing 1 required positional argument: 'model'";

pub const IRIS_MAIN_FIXED: &str = "import gui\n\nprint(gui.launch())";

/// The iris answers with one system-test fix after the first unit loop.
pub fn iris_e2e_script() -> Vec<String> {
    let mut s = iris_script();
    s.insert(7, fenced("main.py", IRIS_MAIN_FIXED));
    s
}

/// Draft, review edit, approve, automatic rounds with one crash and its fix,
/// a manual revision, a second round, all pass. Returns the session.
pub fn iris_e2e(root: &Path, gateway: ChatGateway) -> Session {
    use caseloop_core::fakes::{crashed, ScriptedRunner};
    use caseloop_core::session::{ManualFeedback, UseCaseVerdict};

    let runner = Arc::new(ScriptedRunner::new());
    runner.push_entry(crashed(IRIS_CRASH));
    let mut s = new_session(root, IRIS_TASK, SessionConfig::default(), gateway, runner);
    s.draft_use_cases().unwrap();
    s.submit_use_case_edits(vec![UseCaseEdit::Modify { id: 4, description: IRIS_BOARD.into() }]).unwrap();
    s.approve_use_cases().unwrap();
    s.run_auto().unwrap();
    let mut fb = ManualFeedback::all_pass(1..=3);
    fb.per_use_case.insert(4, UseCaseVerdict::Fail);
    fb.revised_use_cases = Some(iris_manual_edits());
    s.submit_manual_feedback(fb).unwrap();
    s.run_auto().unwrap();
    s.submit_manual_feedback(ManualFeedback::all_pass(1..=4)).unwrap();
    s
}

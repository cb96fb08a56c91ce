//! A self-contained workspace: mock generator and grader scripts plus a config
//! that runs every experiment offline in seconds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::{io_err, PipelineError};
use crate::corpus::Language;
use crate::modelio::{LogprobScript, MockResponse, MockRule, MockScript};
use crate::synthesis::FEEDBACK_MARKER;

/// One question with an acceptable and an unacceptable answer, each given in
/// English, Spanish and Spanglish.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DemoConcept {
    pub topic: &'static str,
    pub question: &'static str,
    pub acceptable: [&'static str; 3],
    pub unacceptable: [&'static str; 3],
}

impl DemoConcept {
    pub fn answer(&self, acceptable: bool, language: Language) -> &'static str {
        let i = match language {
            Language::En => 0,
            Language::Es => 1,
            Language::Cs => 2,
        };
        if acceptable { self.acceptable[i] } else { self.unacceptable[i] }
    }
}

const CONCEPTS: [DemoConcept; 15] = [
    DemoConcept {
        topic: "photosynthesis",
        question: "What does photosynthesis produce for a plant?",
        acceptable: [
            "Photosynthesis converts sunlight into chemical energy stored in glucose.",
            "La fotosíntesis convierte la luz del sol en energía química en la glucosa.",
            "La fotosíntesis converts sunlight into energía química stored in glucose.",
        ],
        unacceptable: [
            "Photosynthesis lets plants absorb food from the soil through their roots.",
            "La fotosíntesis permite que las plantas tomen comida del suelo por sus raíces.",
            "La fotosíntesis lets plants absorb comida del suelo through their raíces.",
        ],
    },
    DemoConcept {
        topic: "evaporation",
        question: "What happens to water during evaporation?",
        acceptable: [
            "Heat from the sun turns liquid water into vapor that rises into the air.",
            "El calor del sol convierte el agua líquida en vapor que sube al aire.",
            "El calor del sol turns liquid water into vapor que sube al aire.",
        ],
        unacceptable: [
            "Water disappears completely when it evaporates and never comes back as rain.",
            "El agua desaparece por completo cuando se evapora y nunca vuelve como lluvia.",
            "Water disappears completely cuando se evapora y nunca vuelve como lluvia.",
        ],
    },
    DemoConcept {
        topic: "gravity",
        question: "Why does a dropped ball fall to the ground?",
        acceptable: [
            "Gravity pulls the ball toward the center of the Earth.",
            "La gravedad atrae la pelota hacia el centro de la Tierra.",
            "Gravity pulls the ball hacia el centro de la Tierra.",
        ],
        unacceptable: [
            "The ball falls because air pushes it down from above.",
            "La pelota cae porque el aire la empuja desde arriba.",
            "The ball falls porque el aire la empuja desde arriba.",
        ],
    },
    DemoConcept {
        topic: "melting",
        question: "What happens to ice when it melts?",
        acceptable: [
            "The ice absorbs heat and changes from a solid into a liquid.",
            "El hielo absorbe calor y pasa de sólido a líquido.",
            "The ice absorbs heat y pasa de sólido a líquido.",
        ],
        unacceptable: [
            "The ice loses heat and changes from a solid into a gas.",
            "El hielo pierde calor y pasa de sólido a gas.",
            "The ice loses heat y pasa de sólido a gas.",
        ],
    },
    DemoConcept {
        topic: "cell membrane",
        question: "What is the job of the cell membrane?",
        acceptable: [
            "The membrane controls what enters and leaves the cell.",
            "La membrana controla lo que entra y sale de la célula.",
            "The membrane controls lo que entra y sale de la célula.",
        ],
        unacceptable: [
            "The membrane stores the genetic information of the cell.",
            "La membrana guarda la información genética de la célula.",
            "The membrane stores la información genética de la célula.",
        ],
    },
    DemoConcept {
        topic: "democracy",
        question: "What does it mean that a country is a democracy?",
        acceptable: [
            "Citizens choose their leaders by voting in free elections.",
            "Los ciudadanos eligen a sus líderes votando en elecciones libres.",
            "Los ciudadanos choose their leaders by voting en elecciones libres.",
        ],
        unacceptable: [
            "The king decides every law and the people must obey him.",
            "El rey decide cada ley y el pueblo debe obedecerlo.",
            "The king decides every law y el pueblo debe obedecerlo.",
        ],
    },
    DemoConcept {
        topic: "supply and demand",
        question: "What usually happens to the price of a product when demand rises?",
        acceptable: [
            "The price usually goes up because more people want the product.",
            "El precio suele subir porque más personas quieren el producto.",
            "The price usually goes up porque más personas quieren el producto.",
        ],
        unacceptable: [
            "The price always goes down because stores sell more of it.",
            "El precio siempre baja porque las tiendas venden más.",
            "The price always goes down porque las tiendas venden más.",
        ],
    },
    DemoConcept {
        topic: "equator",
        question: "What is the equator?",
        acceptable: [
            "It is an imaginary line that divides the Earth into north and south halves.",
            "Es una línea imaginaria que divide la Tierra en mitades norte y sur.",
            "It is an imaginary line que divide la Tierra en norte y sur.",
        ],
        unacceptable: [
            "It is a real wall that separates the countries of the north and south.",
            "Es un muro real que separa los países del norte y del sur.",
            "It is a real wall que separa los países del norte y del sur.",
        ],
    },
    DemoConcept {
        topic: "taxes",
        question: "Why do governments collect taxes?",
        acceptable: [
            "Taxes pay for public services like schools, roads and hospitals.",
            "Los impuestos pagan servicios públicos como escuelas, caminos y hospitales.",
            "Taxes pay for servicios públicos como escuelas y hospitales.",
        ],
        unacceptable: [
            "Taxes are only collected so that leaders can keep the money.",
            "Los impuestos solo se cobran para que los líderes guarden el dinero.",
            "Taxes are only collected para que los líderes guarden el dinero.",
        ],
    },
    DemoConcept {
        topic: "trade",
        question: "Why do countries trade with each other?",
        acceptable: [
            "Countries trade to get goods they cannot easily produce themselves.",
            "Los países comercian para obtener bienes que no pueden producir fácilmente.",
            "Countries trade para obtener bienes they cannot easily produce.",
        ],
        unacceptable: [
            "Countries trade only to give away the goods they do not like.",
            "Los países comercian solo para regalar los bienes que no les gustan.",
            "Countries trade only para regalar los bienes que no les gustan.",
        ],
    },
    DemoConcept {
        topic: "magnets",
        question: "What happens when the north poles of two magnets face each other?",
        acceptable: [
            "The two north poles push each other away.",
            "Los dos polos norte se empujan y se alejan.",
            "The two north poles se empujan y se alejan.",
        ],
        unacceptable: [
            "The two north poles pull together and stick.",
            "Los dos polos norte se atraen y se pegan.",
            "The two north poles se atraen y se pegan.",
        ],
    },
    DemoConcept {
        topic: "food chains",
        question: "Where does the energy in a food chain first come from?",
        acceptable: [
            "The energy first comes from the sun and is captured by plants.",
            "La energía viene primero del sol y las plantas la capturan.",
            "The energy first comes del sol y las plantas la capturan.",
        ],
        unacceptable: [
            "The energy first comes from the animals at the top of the chain.",
            "La energía viene primero de los animales en la cima de la cadena.",
            "The energy first comes de los animales en la cima de la cadena.",
        ],
    },
    DemoConcept {
        topic: "sound",
        question: "How does sound travel from a drum to your ear?",
        acceptable: [
            "The drum makes the air vibrate and the vibrations reach your ear.",
            "El tambor hace vibrar el aire y las vibraciones llegan a tu oído.",
            "The drum makes the air vibrar y las vibraciones llegan a tu oído.",
        ],
        unacceptable: [
            "Sound travels best through empty space where there is no air.",
            "El sonido viaja mejor por el espacio vacío donde no hay aire.",
            "Sound travels best por el espacio vacío donde no hay aire.",
        ],
    },
    DemoConcept {
        topic: "moon phases",
        question: "Why does the Moon seem to change shape during the month?",
        acceptable: [
            "We see different parts of its sunlit side as it orbits the Earth.",
            "Vemos distintas partes de su lado iluminado mientras gira alrededor de la Tierra.",
            "We see different parts of its sunlit side mientras gira alrededor de la Tierra.",
        ],
        unacceptable: [
            "The shadow of the Earth covers a different part of the Moon every night.",
            "La sombra de la Tierra cubre una parte distinta de la Luna cada noche.",
            "The shadow of the Earth cubre una parte distinta de la Luna cada noche.",
        ],
    },
    DemoConcept {
        topic: "conductors",
        question: "Why are electrical wires usually made of copper?",
        acceptable: [
            "Copper is a good conductor so electric current flows through it easily.",
            "El cobre es un buen conductor y la corriente eléctrica pasa fácilmente.",
            "Copper is a good conductor y la corriente eléctrica pasa fácilmente.",
        ],
        unacceptable: [
            "Copper is used because it blocks electricity from moving.",
            "El cobre se usa porque impide que la electricidad se mueva.",
            "Copper is used porque impide que la electricidad se mueva.",
        ],
    },
];

pub const DEMO_BATCHES: usize = 3;
const PER_BATCH: usize = 5;

/// The demo's concepts; batch `b` holds concepts `5b..5b+5`.
pub fn demo_concepts() -> &'static [DemoConcept] {
    &CONCEPTS
}

fn batch(b: usize) -> &'static [DemoConcept] {
    &CONCEPTS[b * PER_BATCH..(b + 1) * PER_BATCH]
}

fn fenced(value: serde_json::Value) -> String {
    format!("```json\n{}\n```", serde_json::to_string_pretty(&value).expect("json"))
}

fn generation_output(b: usize, topic_override: Option<&str>) -> String {
    let items: Vec<_> = batch(b)
        .iter()
        .flat_map(|c| {
            [(true, "Acceptable"), (false, "Unacceptable")].map(|(acc, grade)| {
                json!({
                    "question": c.question,
                    "answer": c.answer(acc, Language::En),
                    "grade": grade,
                    "topic": topic_override.unwrap_or(c.topic),
                })
            })
        })
        .collect();
    fenced(json!(items))
}

fn translation_output(b: usize, language: Language) -> String {
    let items: Vec<_> = batch(b)
        .iter()
        .enumerate()
        .flat_map(|(k, c)| {
            [true, false].map(|acc| {
                let idx = 2 * k + usize::from(!acc);
                json!({ "id": format!("b{b:03}-{idx:02}"), "answer": c.answer(acc, language) })
            })
        })
        .collect();
    fenced(json!(items))
}

fn text(t: String) -> MockResponse {
    MockResponse { text: t, ..Default::default() }
}

fn rule(pattern: String, model: Option<&str>, response: MockResponse) -> MockRule {
    MockRule { pattern, model: model.map(str::to_string), response }
}

/// Generator script. The first batch is answered once with every item on one
/// topic, so the gate rejects it and a single re-prompt follows.
pub fn generator_script() -> MockScript {
    let mut rules = Vec::new();
    for b in 0..DEMO_BATCHES {
        rules.push(rule(format!(r"(?s)into Spanish\..*id: b{b:03}-00"), None, text(translation_output(b, Language::Es))));
        rules.push(rule(format!(r"(?s)in Spanglish.*id: b{b:03}-00"), None, text(translation_output(b, Language::Cs))));
    }
    let excluded = |b: usize| {
        format!(r"(?s)Write exactly.*Do not use any of these topics:[^\n]*{}", regex::escape(batch(b)[0].topic))
    };
    rules.push(rule(excluded(1), None, text(generation_output(2, None))));
    rules.push(rule(excluded(0), None, text(generation_output(1, None))));
    rules.push(rule(
        format!("(?s)Write exactly.*{}", regex::escape(FEEDBACK_MARKER)),
        None,
        text(generation_output(0, None)),
    ));
    rules.push(rule("Write exactly".into(), None, text(generation_output(0, Some("plants")))));
    rules.push(rule(String::new(), None, text("I can only help with classroom data requests.".into())));
    MockScript { seed: 1, rules }
}

fn answers_pattern(acceptable: bool, languages: &[Language]) -> String {
    let alts: Vec<String> = CONCEPTS
        .iter()
        .flat_map(|c| languages.iter().map(move |l| regex::escape(c.answer(acceptable, *l))))
        .collect();
    format!(r"(?s)Answer: (?:{})\nGrade:\n\z", alts.join("|"))
}

fn fixed(acceptable: f64, unacceptable: f64) -> MockResponse {
    MockResponse {
        logprobs: Some(LogprobScript::Fixed(BTreeMap::from([
            ("Acceptable".to_string(), acceptable),
            ("Unacceptable".to_string(), unacceptable),
        ]))),
        ..Default::default()
    }
}

/// Model name prefix the mock trainer gives its adapters.
const ADAPTER_MODEL: &str = "^mock-adapter-";

/// Grader script. Adapters separate the labels; base models see English
/// acceptable answers favourably and score everything else by hash.
pub fn grader_script() -> MockScript {
    let rules = vec![
        rule(answers_pattern(true, &Language::ALL), Some(ADAPTER_MODEL), fixed(-0.05, -3.0)),
        rule(String::new(), Some(ADAPTER_MODEL), fixed(-2.5, -0.1)),
        rule(answers_pattern(true, &[Language::En]), None, fixed(-0.1, -2.5)),
        rule(
            String::new(),
            None,
            MockResponse {
                logprobs: Some(LogprobScript::Hashed(vec!["Acceptable".into(), "Unacceptable".into()])),
                ..Default::default()
            },
        ),
    ];
    MockScript { seed: 2, rules }
}

const DEMO_CONFIG: &str = r#"# Offline demo: mock generator, two mock graders, mock trainer.
clock = "2025-01-01T00:00:00.000Z"

[paths]
corpus = "corpus.jsonl"
work = "work"

[seeds]
split = 7
mix = 11
sample = 13
eval = 17

[splits]
train = 12
val = 6
test = 12

[grading]
few_shot_exemplars = 3

[grading.strategy]
kind = "auto"
n_samples = 5

[finetune]
train_size = 12
epochs = 3
learning_rate = 0.0002

[finetune.trainer]
kind = "mock"

[generation]
generator_id = "demo-generator"
subjects = ["science", "social_science"]
grade_min = 6
grade_max = 6
batches = 3
batch_size = 10

[backends.generator]
backend_id = "generator"
model_name = "demo-generator"
mock_script = "generator.mock.json"
max_in_flight = 1

[[backends.graders]]
backend_id = "llama"
model_name = "llama-demo"
mock_script = "grader.mock.json"
max_in_flight = 4

[[backends.graders]]
backend_id = "nemo"
model_name = "nemo-demo"
mock_script = "grader.mock.json"
max_in_flight = 4
"#;

/// Write the demo config and mock scripts into `dir`; returns the config path.
pub fn write_demo_workspace(dir: &Path) -> Result<PathBuf, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        crate::util::write_if_changed(&p, body.as_bytes()).map_err(|e| io_err(&p, e)).map(|_| p)
    };
    let json = |s: &MockScript| serde_json::to_string_pretty(s).expect("scripts serialize") + "\n";
    write("generator.mock.json", json(&generator_script()))?;
    write("grader.mock.json", json(&grader_script()))?;
    write("pipeline.toml", DEMO_CONFIG.to_string())
}

//! Template grammars for the two built-in synthetic domains.

use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    AssistantCommands,
    EntityRich,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::AssistantCommands, Domain::EntityRich];

    pub fn name(self) -> &'static str {
        match self {
            Domain::AssistantCommands => "assistant-commands",
            Domain::EntityRich => "entity-rich",
        }
    }

    pub fn parse(s: &str) -> Option<Domain> {
        Self::ALL.into_iter().find(|d| d.name() == s)
    }

    fn grammar(self) -> &'static Grammar {
        match self {
            Domain::AssistantCommands => &ASSISTANT,
            Domain::EntityRich => &ENTITY,
        }
    }

    /// Draws one reference sentence.
    pub fn sample(self, rng: &mut Rng) -> Vec<String> {
        let g = self.grammar();
        let template = g.templates[rng.below(g.templates.len())];
        let mut out = Vec::new();
        for tok in template.split_whitespace() {
            match tok.strip_prefix('$') {
                Some(slot) => {
                    let fillers = g.slot(slot);
                    let choice = fillers[rng.below(fillers.len())];
                    out.extend(choice.split_whitespace().map(str::to_owned));
                }
                None => out.push(tok.to_owned()),
            }
        }
        out
    }

    /// Every word the grammar can produce, sorted and deduplicated.
    pub fn lexicon(self) -> Vec<&'static str> {
        let g = self.grammar();
        let mut words: Vec<&'static str> = g
            .templates
            .iter()
            .flat_map(|t| t.split_whitespace())
            .filter(|w| !w.starts_with('$'))
            .chain(
                g.slots
                    .iter()
                    .flat_map(|(_, fill)| fill.iter().flat_map(|f| f.split_whitespace())),
            )
            .collect();
        words.sort_unstable();
        words.dedup();
        words
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

struct Grammar {
    templates: &'static [&'static str],
    slots: &'static [(&'static str, &'static [&'static str])],
}

impl Grammar {
    fn slot(&self, name: &str) -> &'static [&'static str] {
        self.slots
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| *f)
            .unwrap_or_else(|| panic!("grammar slot `{name}` undefined"))
    }
}

const NUMBERS: &[&str] = &[
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "twenty", "thirty",
];

static ASSISTANT: Grammar = Grammar {
    templates: &[
        "turn $onoff the $room $device",
        "set a timer for $number $unit",
        "what is the weather in $city $when",
        "play some $genre music in the $room",
        "remind me to $task $when",
        "set the $room $device to $number percent",
        "add $item to my shopping list",
        "what time is it in $city",
        "wake me up at $number $ampm",
        "how long will it take to get to $city",
    ],
    slots: &[
        ("onoff", &["on", "off"]),
        (
            "room",
            &["kitchen", "bedroom", "living room", "office", "bathroom", "garage"],
        ),
        ("device", &["lights", "lamp", "fan", "heater", "speaker", "thermostat"]),
        ("number", NUMBERS),
        ("unit", &["minutes", "seconds", "hours"]),
        (
            "city",
            &["boston", "seattle", "chicago", "denver", "paris", "london", "tokyo"],
        ),
        ("when", &["today", "tomorrow", "tonight", "this weekend", "next week"]),
        ("genre", &["jazz", "rock", "classical", "country", "pop", "ambient"]),
        (
            "task",
            &[
                "call mom",
                "buy milk",
                "water the plants",
                "take out the trash",
                "pay rent",
            ],
        ),
        ("item", &["eggs", "bread", "butter", "apples", "coffee", "rice", "milk"]),
        ("ampm", &["am", "pm"]),
    ],
};

static ENTITY: Grammar = Grammar {
    templates: &[
        "call $first $last on $phone",
        "play $adj $noun by $first $last",
        "navigate to $number $street $suffix",
        "send a message to $first saying $phrase",
        "book a table at $restaurant for $number people",
        "who sang $adj $noun",
        "text $first $last that $phrase",
        "find $restaurant near $street $suffix",
    ],
    slots: &[
        (
            "first",
            &["maria", "john", "aiko", "dmitri", "priya", "oliver", "fatima", "lucas"],
        ),
        (
            "last",
            &[
                "garcia", "smith", "tanaka", "ivanov", "sharma", "bennett", "haddad", "moreau",
            ],
        ),
        ("phone", &["mobile", "home", "work"]),
        (
            "adj",
            &["golden", "electric", "silent", "broken", "midnight", "velvet", "neon"],
        ),
        (
            "noun",
            &["river", "heart", "highway", "dreams", "garden", "skyline", "echo"],
        ),
        ("number", NUMBERS),
        ("street", &["maple", "oak", "harbor", "cedar", "willow", "summit"]),
        ("suffix", &["street", "avenue", "road", "lane", "boulevard"]),
        (
            "phrase",
            &[
                "i am running late",
                "see you soon",
                "call me back",
                "happy birthday",
                "on my way",
            ],
        ),
        (
            "restaurant",
            &["luigis", "the blue door", "sakura house", "casa verde", "the oak grill"],
        ),
    ],
};

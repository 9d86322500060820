//! Seeded generator of a small Turkish-like NER corpus.
//!
//! Sentences come from fixed templates whose slots are filled with person,
//! location and organization mentions. Mentions are drawn from gazetteers or,
//! at `novel_rate`, invented from syllables so that held-out data contains
//! unseen names. Case suffixes attach to the last token of a mention after an
//! apostrophe (`Ankara'da`, `Galerisi'nde`) following vowel harmony.
//! Capitalised non-entities (titles, months, days, `Türk`) act as
//! distractors. Each token carries a fake morphological analysis.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{LabeledSentence, Token};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub sentences: usize,
    pub seed: u64,
    /// Share of mentions invented rather than taken from a gazetteer.
    pub novel_rate: f64,
    pub with_morph: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sentences: 2000,
            seed: 1,
            novel_rate: 0.2,
            with_morph: true,
        }
    }
}

const PERSON: &str = "PERSON";
const LOCATION: &str = "LOCATION";
const ORGANIZATION: &str = "ORGANIZATION";

const FIRST_NAMES: &[&str] = &[
    "Meliha", "Ahmet", "Mehmet", "Ayşe", "Fatma", "Mustafa", "Zeynep", "Emre", "Elif", "Burak", "Selin", "Murat", "Ece",
    "Hakan", "Gül", "Kemal", "Orhan", "Yasemin", "Oğuz", "Tarık", "Sevgi", "Canan", "Serkan", "Leyla", "Barış", "Derya",
    "Volkan", "Hülya", "Cem", "Aslı", "Deniz",
];
const SURNAMES: &[&str] = &[
    "Düzağaç", "Yılmaz", "Kaya", "Demir", "Şahin", "Çelik", "Yıldız", "Aydın", "Öztürk", "Arslan", "Doğan", "Kılıç",
    "Çetin", "Koç", "Kurt", "Özdemir", "Polat", "Aksoy", "Ergin", "Tekin",
];
const LOCATIONS: &[&str] = &[
    "Ankara", "İstanbul", "İzmir", "Bursa", "Antalya", "Trabzon", "Konya", "Adana", "Eskişehir", "Kayseri", "Samsun",
    "Van", "Mardin", "Edirne", "Sinop", "Almanya", "Fransa", "Londra", "Paris", "Berlin", "Moskova", "Bakü", "Kadıköy",
    "Beşiktaş", "Çankaya", "Avrupa", "Karadeniz",
];
const ACRONYMS: &[&str] = &["TBMM", "THY", "TÜBİTAK", "ASELSAN", "TRT", "TÜSİAD"];
const BANKS: &[&str] = &["Ziraat", "Halk", "Garanti", "Vakıf", "Yapı Kredi"];
const HOLDINGS: &[&str] = &["Sabancı", "Doğuş", "Anadolu", "Zorlu", "Yıldız"];
const NEWSPAPERS: &[&str] = &["Milliyet", "Hürriyet", "Cumhuriyet"];
const FOUNDATIONS: &[&str] = &["Türk Eğitim", "Kültür Sanat", "Doğa Koruma"];
const SYLLABLES: &[&str] = &[
    "ka", "la", "me", "ri", "so", "tu", "ne", "bi", "da", "ze", "yu", "ha", "mi", "ro", "sa", "te", "lo", "gü", "ay",
    "er", "ok", "ul", "in", "ar", "el", "an", "ber", "tan", "dur", "kız",
];
const SURNAME_ENDINGS: &[&str] = &["oğlu", "er", "can", "han", "soy", "gil"];
const PLACE_ENDINGS: &[&str] = &["kent", "ova", "köy", "hisar", "abad", "pınar"];
const ORG_HEADS: &[(&str, bool)] = &[
    ("Holding", false),
    ("Bankası", true),
    ("Vakfı", true),
    ("Derneği", true),
    ("Üniversitesi", true),
    ("Grubu", true),
];
const MONTHS: &[&str] = &[
    "Ocak", "Şubat", "Mart", "Nisan", "Mayıs", "Haziran", "Temmuz", "Ağustos", "Eylül", "Ekim", "Kasım", "Aralık",
];
const DAYS: &[&str] = &["Pazartesi", "Salı", "Çarşamba", "Perşembe", "Cuma", "Cumartesi", "Pazar"];

const TEMPLATES: &[&str] = &[
    "{PER} dün {LOC:loc} bir açıklama yaptı .",
    "{ORG} yönetim kurulu başkanı {PER} , yeni yatırımları {LOC:loc} duyurdu .",
    "{PER:gen} resimleri {NUM} {MONTH:dat} dek {ORG:loc} sergilenecek .",
    "Bakan {PER} , {LOC:abl} gelen heyeti kabul etti .",
    "{ORG} , {YEAR} yılında {LOC:loc} kuruldu .",
    "{LOC} ile {LOC} arasındaki seferler {MONTH} ayında başlayacak .",
    "{PER} ve {PER} {ORG:loc} bir araya geldi .",
    "Toplantı {DAY} günü {ORG:gen} {LOC} ofisinde yapılacak .",
    "{ORG} hisseleri bugün yüzde {NUM} değer kazandı .",
    "{PER} , {ORG:gen} yeni genel müdürü oldu .",
    "Geçen hafta {LOC:dat} giden {PER} , {NUM} gün kaldı .",
    "{LOC} Valisi {PER} , kentteki çalışmaları inceledi .",
    "Dr. {PER} {ORG:loc} görev yapıyor .",
    "Hava durumu {LOC:loc} yağmurlu , {LOC:loc} güneşli olacak .",
    "{ORG} ile {ORG} arasında işbirliği anlaşması imzalandı .",
    "Sanatçı {PER} yeni albümünü {MONTH} ayında çıkaracak .",
    "{PER:gen} avukatı , davanın {MONTH:dat} ertelendiğini söyledi .",
    "Bu yıl {LOC:loc} düzenlenen festivale {NUM} bin kişi katıldı .",
    "{ORG:gen} açıklamasına göre {LOC:loc} yeni bir şube açılacak .",
    "Başbakan {PER} yarın {LOC:dat} gidecek .",
    "{PER} , {LOC:loc} yaşayan ailesini ziyaret etti .",
    "Türk heyeti {LOC:loc} {ORG} yetkilileriyle görüştü .",
    "{ORG} , {PER:acc} onursal üye seçti .",
    "Sayın {PER} , {ORG:gen} toplantısında konuştu .",
    "{LOC:loc} yapılan maçta {ORG} {NUM} golle kazandı .",
    "{PER} {YEAR} yılında {LOC:loc} doğdu .",
    "Yazar {PER:gen} son romanı {ORG} tarafından yayımlandı .",
    "{LOC} merkezli {ORG} , {NUM} yeni çalışan alacak .",
    "{MONTH} ayında {LOC:dat} gelen turist sayısı arttı .",
    "{PER} ile {PER} , {LOC:loc} evlendi .",
];

/// Templates whose `{ANY}` slots take a mention of a random type, so the type
/// must be read off the mention itself.
const OPEN_TEMPLATES: &[&str] = &[
    "{ANY} hakkında yeni bir rapor yayımlandı .",
    "Gazeteciler {ANY:gen} durumunu merak ediyor .",
    "Haberde {ANY} ve {ANY} öne çıktı .",
    "{ANY:dat} yönelik eleştiriler arttı .",
    "Uzmanlar {ANY:acc} örnek gösterdi .",
    "Dün akşam {ANY} gündemin ilk sırasındaydı .",
    "{ANY} , bu hafta sosyal medyada çok konuşuldu .",
    "Raporda {ANY:abl} söz ediliyor .",
];

const PLAIN_TEMPLATES: &[&str] = &[
    "Pazartesi günü hava soğuk olacak .",
    "Türk ekonomisi bu yıl yüzde {NUM} büyüdü .",
    "Deniz suyu {MONTH} ayında ısındı .",
    "Yeni yasa {DAY} günü yürürlüğe girecek .",
    "Bakanlık açıklamasında fiyatların düşeceği belirtildi .",
    "Ekim ayında yapılan anket sonuçları açıklandı .",
];

/// Share of sentences drawn from [`PLAIN_TEMPLATES`].
const PLAIN_RATE: f64 = 0.1;
/// Share of sentences drawn from [`OPEN_TEMPLATES`].
const OPEN_RATE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Case {
    Nom,
    Loc,
    Dat,
    Gen,
    Abl,
    Acc,
}

impl Case {
    fn parse(s: &str) -> Case {
        match s {
            "loc" => Case::Loc,
            "dat" => Case::Dat,
            "gen" => Case::Gen,
            "abl" => Case::Abl,
            "acc" => Case::Acc,
            _ => Case::Nom,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Case::Nom => "Nom",
            Case::Loc => "Loc",
            Case::Dat => "Dat",
            Case::Gen => "Gen",
            Case::Abl => "Abl",
            Case::Acc => "Acc",
        }
    }
}

fn is_vowel(c: char) -> bool {
    "aeıioöuüAEIİOÖUÜ".contains(c)
}

/// Case suffix for `word`, apostrophe included. `pronominal` selects the
/// `n`-buffered forms used after a possessive ending (`Galerisi'nde`).
fn case_suffix(word: &str, case: Case, pronominal: bool) -> String {
    if case == Case::Nom {
        return String::new();
    }
    let acronym = word.chars().all(|c| !c.is_lowercase());
    let last_vowel = word.chars().rev().find(|&c| is_vowel(c)).map(|c| c.to_lowercase().next().unwrap_or(c));
    let (a, i) = match last_vowel {
        _ if acronym => ('e', 'i'),
        Some('a') | Some('ı') => ('a', 'ı'),
        Some('o') | Some('u') => ('a', 'u'),
        Some('e') | Some('i') | None => ('e', 'i'),
        Some(_) => ('e', 'ü'),
    };
    let last = word.chars().last().unwrap_or('a');
    let ends_vowel = acronym || is_vowel(last);
    let d = if !ends_vowel && "çfhkpsşt".contains(last) { 't' } else { 'd' };
    let body = match (case, pronominal, ends_vowel) {
        (Case::Loc, true, _) => format!("nd{a}"),
        (Case::Abl, true, _) => format!("nd{a}n"),
        (Case::Dat, true, _) => format!("n{a}"),
        (Case::Acc, true, _) => format!("n{i}"),
        (Case::Gen, true, _) | (Case::Gen, false, true) => format!("n{i}n"),
        (Case::Loc, false, _) => format!("{d}{a}"),
        (Case::Abl, false, _) => format!("{d}{a}n"),
        (Case::Dat, false, true) => format!("y{a}"),
        (Case::Dat, false, false) => a.to_string(),
        (Case::Acc, false, true) => format!("y{i}"),
        (Case::Acc, false, false) => i.to_string(),
        (Case::Gen, false, false) => format!("{i}n"),
        (Case::Nom, _, _) => String::new(),
    };
    format!("'{body}")
}

fn lower(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            'I' => 'ı',
            'İ' => 'i',
            c => c.to_lowercase().next().unwrap_or(c),
        })
        .collect()
}

fn capitalize(s: &str) -> String {
    let mut cs = s.chars();
    match cs.next() {
        Some(c) => {
            let head: String = if c == 'i' { "İ".into() } else { c.to_uppercase().collect() };
            head + cs.as_str()
        }
        None => String::new(),
    }
}

/// An entity mention before inflection.
struct Mention {
    words: Vec<String>,
    kind: &'static str,
    /// Last word ends in a possessive suffix (`Bankası`).
    possessive: bool,
}

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty list")
}

fn novel_stem<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(2..=3);
    capitalize(&(0..n).map(|_| pick(rng, SYLLABLES)).collect::<String>())
}

fn split_words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn person<R: Rng>(rng: &mut R, novel: bool) -> Mention {
    let mut words = Vec::new();
    if novel {
        words.push(novel_stem(rng));
        if rng.gen_bool(0.6) {
            words.push(novel_stem(rng) + pick(rng, SURNAME_ENDINGS));
        }
    } else {
        words.push(pick(rng, FIRST_NAMES).to_string());
        if rng.gen_bool(0.6) {
            words.push(pick(rng, SURNAMES).to_string());
        }
    }
    Mention {
        words,
        kind: PERSON,
        possessive: false,
    }
}

fn location<R: Rng>(rng: &mut R, novel: bool) -> Mention {
    let word = if novel {
        novel_stem(rng) + pick(rng, PLACE_ENDINGS)
    } else {
        pick(rng, LOCATIONS).to_string()
    };
    Mention {
        words: vec![word],
        kind: LOCATION,
        possessive: false,
    }
}

fn organization<R: Rng>(rng: &mut R, novel: bool) -> Mention {
    let (text, possessive) = if novel {
        let (head, poss) = *ORG_HEADS.choose(rng).expect("non-empty");
        (format!("{} {head}", novel_stem(rng)), poss)
    } else {
        match rng.gen_range(0..9) {
            0 => (format!("{} Üniversitesi", pick(rng, LOCATIONS)), true),
            1 => (format!("{} Bankası", pick(rng, BANKS)), true),
            2 => (format!("{} Holding", pick(rng, HOLDINGS)), false),
            3 => (format!("{} Büyükşehir Belediyesi", pick(rng, LOCATIONS)), true),
            4 => (format!("{} TCDD Sanat Galerisi", pick(rng, LOCATIONS)), true),
            5 => (format!("{} Gazetesi", pick(rng, NEWSPAPERS)), true),
            6 => (format!("{} Vakfı", pick(rng, FOUNDATIONS)), true),
            7 => (format!("{} Spor Kulübü", pick(rng, LOCATIONS)), true),
            _ => (pick(rng, ACRONYMS).to_string(), false),
        }
    };
    Mention {
        words: split_words(&text),
        kind: ORGANIZATION,
        possessive,
    }
}

/// Fake analysis for a template word.
fn plain_analysis(word: &str) -> String {
    if word.chars().all(|c| c.is_ascii_punctuation()) {
        return format!("{word}+Punc");
    }
    if word.chars().all(|c| c.is_ascii_digit()) {
        return format!("{word}+Num+Card");
    }
    let w = lower(word);
    for past in ["dı", "di", "du", "dü", "tı", "ti", "tu", "tü"] {
        if let Some(stem) = w.strip_suffix(past) {
            if stem.chars().count() >= 2 {
                return format!("{stem}+Verb+Pos+Past+A3sg");
            }
        }
    }
    for fut in ["acak", "ecek"] {
        if let Some(stem) = w.strip_suffix(fut) {
            return format!("{stem}+Verb+Pos+Fut+A3sg");
        }
    }
    format!("{w}+Noun+A3sg+Pnon+Nom")
}

fn proper_analysis(stem: &str, case: Case, possessive: bool) -> String {
    let poss = if possessive { "P3sg" } else { "Pnon" };
    let prop = if possessive { "" } else { "+Prop" };
    format!("{}+Noun{prop}+A3sg+{poss}+{}", lower(stem), case.tag())
}

fn fill_slot<R: Rng>(rng: &mut R, slot: &str, novel_rate: f64, out: &mut Vec<Token>) {
    let (name, case) = match slot.split_once(':') {
        Some((n, c)) => (n, Case::parse(c)),
        None => (slot, Case::Nom),
    };
    let novel = rng.gen_bool(novel_rate);
    let name = if name == "ANY" { pick(rng, &["PER", "LOC", "ORG"]) } else { name };
    let mention = match name {
        "PER" => person(rng, novel),
        "LOC" => location(rng, novel),
        "ORG" => organization(rng, novel),
        _ => {
            let word = match name {
                "NUM" => rng.gen_range(2..100).to_string(),
                "YEAR" => rng.gen_range(1950..2021).to_string(),
                "MONTH" => pick(rng, MONTHS).to_string(),
                _ => pick(rng, DAYS).to_string(),
            };
            let surface = format!("{word}{}", case_suffix(&word, case, false));
            let analysis = if name == "NUM" || name == "YEAR" {
                format!("{word}+Num+Card")
            } else {
                format!("{}+Noun+A3sg+Pnon+{}", lower(&word), case.tag())
            };
            out.push(Token::new(surface, "O").with_morph(analysis));
            return;
        }
    };
    let n = mention.words.len();
    for (k, w) in mention.words.iter().enumerate() {
        let last = k + 1 == n;
        let tag = if k == 0 { format!("B-{}", mention.kind) } else { format!("I-{}", mention.kind) };
        let (surface, analysis) = if last {
            let suffix = case_suffix(w, case, mention.possessive);
            (format!("{w}{suffix}"), proper_analysis(w, case, mention.possessive))
        } else {
            (w.clone(), proper_analysis(w, Case::Nom, false))
        };
        out.push(Token::new(surface, tag).with_morph(analysis));
    }
}

fn sentence<R: Rng>(rng: &mut R, novel_rate: f64) -> LabeledSentence {
    let u: f64 = rng.gen();
    let template = if u < PLAIN_RATE {
        pick(rng, PLAIN_TEMPLATES)
    } else if u < PLAIN_RATE + OPEN_RATE {
        pick(rng, OPEN_TEMPLATES)
    } else {
        pick(rng, TEMPLATES)
    };
    let mut tokens = Vec::new();
    for part in template.split_whitespace() {
        match part.strip_prefix('{').and_then(|p| p.strip_suffix('}')) {
            Some(slot) => fill_slot(rng, slot, novel_rate, &mut tokens),
            None => tokens.push(Token::new(part, "O").with_morph(plain_analysis(part))),
        }
    }
    LabeledSentence::new(tokens)
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<LabeledSentence>> {
    if cfg.sentences == 0 {
        return Err(Error::Config("sentence count must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.novel_rate) {
        return Err(Error::Config(format!("novel_rate {} outside [0, 1]", cfg.novel_rate)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out: Vec<LabeledSentence> = (0..cfg.sentences).map(|_| sentence(&mut rng, cfg.novel_rate)).collect();
    if !cfg.with_morph {
        for t in out.iter_mut().flat_map(|s| s.tokens.iter_mut()) {
            t.morph = None;
        }
    }
    Ok(out)
}

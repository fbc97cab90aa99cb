//! Fixed synonym table shared by the paraphrasing mock generator and the
//! hashing embedder, so that paraphrases stay close in embedding space while
//! losing exact-token overlap.

use std::collections::HashMap;
use std::sync::LazyLock;

/// (passage word, substitute). Substitutes never appear as keys.
pub const SYNONYMS: &[(&str, &str)] = &[
    ("built", "constructed"),
    ("build", "construct"),
    ("founded", "established"),
    ("city", "town"),
    ("cities", "towns"),
    ("river", "stream"),
    ("large", "big"),
    ("largest", "biggest"),
    ("small", "little"),
    ("famous", "renowned"),
    ("began", "started"),
    ("begin", "start"),
    ("company", "firm"),
    ("moved", "relocated"),
    ("won", "earned"),
    ("wrote", "authored"),
    ("written", "authored"),
    ("village", "hamlet"),
    ("museum", "gallery"),
    ("died", "perished"),
    ("born", "delivered"),
    ("ship", "vessel"),
    ("ships", "vessels"),
    ("king", "monarch"),
    ("queen", "sovereign"),
    ("war", "conflict"),
    ("battle", "fight"),
    ("army", "troops"),
    ("church", "chapel"),
    ("school", "academy"),
    ("students", "pupils"),
    ("teacher", "instructor"),
    ("book", "volume"),
    ("books", "volumes"),
    ("novel", "story"),
    ("song", "tune"),
    ("songs", "tunes"),
    ("album", "record"),
    ("film", "movie"),
    ("films", "movies"),
    ("director", "filmmaker"),
    ("painter", "artist"),
    ("painting", "artwork"),
    ("paintings", "artworks"),
    ("bridge", "span"),
    ("tower", "spire"),
    ("mountain", "peak"),
    ("mountains", "peaks"),
    ("island", "isle"),
    ("lake", "pond"),
    ("sea", "ocean"),
    ("coast", "shore"),
    ("farmers", "growers"),
    ("merchants", "traders"),
    ("trade", "commerce"),
    ("market", "bazaar"),
    ("population", "inhabitants"),
    ("people", "residents"),
    ("ancient", "old"),
    ("new", "fresh"),
    ("modern", "contemporary"),
    ("important", "significant"),
    ("major", "principal"),
    ("main", "chief"),
    ("completed", "finished"),
    ("destroyed", "ruined"),
    ("rebuilt", "reconstructed"),
    ("discovered", "uncovered"),
    ("invented", "devised"),
    ("created", "made"),
    ("designed", "planned"),
    ("opened", "inaugurated"),
    ("closed", "shut"),
    ("studied", "researched"),
    ("worked", "labored"),
    ("traveled", "journeyed"),
    ("travelled", "journeyed"),
    ("visited", "toured"),
    ("married", "wed"),
    ("defeated", "beat"),
    ("captured", "seized"),
    ("ruled", "governed"),
    ("elected", "chosen"),
    ("named", "called"),
    ("known", "recognized"),
    ("located", "situated"),
    ("center", "hub"),
    ("capital", "seat"),
    ("region", "area"),
    ("country", "nation"),
    ("empire", "realm"),
    ("kingdom", "domain"),
    ("government", "administration"),
    ("leader", "head"),
    ("scientist", "researcher"),
    ("engineer", "technician"),
    ("architect", "designer"),
    ("composer", "songwriter"),
    ("poet", "versifier"),
    ("players", "athletes"),
    ("team", "squad"),
    ("championship", "title"),
    ("prize", "award"),
    ("factory", "plant"),
    ("railway", "railroad"),
    ("train", "locomotive"),
    ("harbor", "port"),
    ("harbour", "port"),
    ("festival", "celebration"),
    ("temple", "shrine"),
    ("castle", "fortress"),
    ("garden", "park"),
    ("forest", "woods"),
    ("desert", "wasteland"),
    ("storm", "tempest"),
    ("flood", "deluge"),
    ("fire", "blaze"),
    ("year", "annum"),
    ("years", "annums"),
    ("century", "era"),
    ("first", "earliest"),
    ("last", "final"),
    ("later", "afterwards"),
    ("early", "initial"),
    ("many", "numerous"),
    ("several", "various"),
    ("produced", "manufactured"),
    ("sold", "marketed"),
    ("bought", "purchased"),
    ("grew", "expanded"),
    ("library", "archive"),
    ("university", "college"),
    ("observatory", "lookout"),
    ("telescope", "scope"),
    ("stars", "suns"),
    ("wine", "vintage"),
    ("bread", "loaf"),
    ("cheese", "curd"),
    ("coffee", "brew"),
    ("tea", "infusion"),
    ("wool", "fleece"),
    ("silk", "fabric"),
    ("gold", "bullion"),
    ("silver", "argent"),
    ("salt", "brine"),
    ("canal", "waterway"),
    ("dam", "barrier"),
    ("road", "route"),
    ("roads", "routes"),
    ("street", "avenue"),
    ("orchestra", "ensemble"),
    ("concert", "recital"),
    ("theatre", "playhouse"),
    ("theater", "playhouse"),
    ("play", "drama"),
    ("plays", "dramas"),
];

static TABLE: LazyLock<HashMap<&'static str, &'static str>> = LazyLock::new(|| {
    let mut map = HashMap::new();
    for (word, sub) in SYNONYMS {
        map.entry(*word).or_insert(*sub);
    }
    map
});

/// Maps every word and every substitute onto one shared representative.
static CANONICAL: LazyLock<HashMap<&'static str, &'static str>> = LazyLock::new(|| {
    let mut map = HashMap::new();
    for (word, sub) in SYNONYMS {
        let rep = *map.get(word).or(map.get(sub)).unwrap_or(word);
        map.entry(*word).or_insert(rep);
        map.entry(*sub).or_insert(rep);
    }
    map
});

/// Paraphrase substitute for a normalized token, if the table has one.
pub fn substitute(token: &str) -> Option<&'static str> {
    TABLE.get(token).copied()
}

/// Synonym-class representative of a normalized token.
pub fn canonical(token: &str) -> &str {
    CANONICAL.get(token).copied().unwrap_or(token)
}

//! Longest-match dictionary tagging as an extra input column.

use chartag::data::{Feature, Gazetteer, Sentence, Token};

fn main() {
    let dict = Gazetteer::parse("aspirin\nliver damage\nliver\nacute liver damage\n", true);
    let s = Sentence::new(
        "demo",
        ["Aspirin", "caused", "acute", "liver", "damage", "and", "liver", "pain"]
            .iter()
            .map(|w| Token::new(*w))
            .collect(),
    );
    let tags = dict.tag(&s.surfaces());
    for (w, t) in s.surfaces().iter().zip(&tags) {
        println!("{w:<10} {t}");
    }
    println!("feature column name: {}", Feature::Gazetteer.name());
}

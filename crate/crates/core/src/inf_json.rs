//! Serde adapter for `Vec<f64>` fields that may hold infinities. JSON has no infinity
//! literal, so `±inf` travel as the strings `"inf"` and `"-inf"`.

use alloc::string::String;
use alloc::vec::Vec;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::Deserialize;

#[derive(Deserialize)]
#[serde(untagged)]
enum Value {
    Num(f64),
    Str(String),
}

pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for &x in v {
        if x == f64::INFINITY {
            seq.serialize_element("inf")?;
        } else if x == f64::NEG_INFINITY {
            seq.serialize_element("-inf")?;
        } else {
            seq.serialize_element(&x)?;
        }
    }
    seq.end()
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    struct V;
    impl<'de> Visitor<'de> for V {
        type Value = Vec<f64>;
        fn expecting(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
            f.write_str("a list of numbers, \"inf\" or \"-inf\"")
        }
        fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Vec<f64>, A::Error> {
            let mut out = Vec::new();
            while let Some(v) = seq.next_element::<Value>()? {
                out.push(match v {
                    Value::Num(x) => x,
                    Value::Str(s) if s == "inf" => f64::INFINITY,
                    Value::Str(s) if s == "-inf" => f64::NEG_INFINITY,
                    Value::Str(other) => return Err(de::Error::custom(alloc::format!("bad number {other:?}"))),
                });
            }
            Ok(out)
        }
    }
    d.deserialize_seq(V)
}

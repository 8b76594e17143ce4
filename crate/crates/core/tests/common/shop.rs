use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rspn_engine::schema::{load_schema, Database};

pub fn write(dir: &Path, name: &str, body: &str) {
    std::fs::write(dir.join(name), body).unwrap();
}

/// Four tables: orderline -> orders -> customer -> state.
pub fn shop(dir: &Path) -> Database {
    write(
        dir,
        "schema.toml",
        r#"
[[tables]]
name = "state"
csv = "state.csv"
primary_key = "s_id"
columns = [ { name = "s_id", kind = "continuous" }, { name = "s_name", kind = "categorical" } ]

[[tables]]
name = "customer"
csv = "customer.csv"
primary_key = "c_id"
columns = [
  { name = "c_id", kind = "continuous" },
  { name = "s_id", kind = "continuous" },
  { name = "c_age", kind = "continuous" },
]

[[tables]]
name = "orders"
csv = "orders.csv"
primary_key = "o_id"
columns = [
  { name = "o_id", kind = "continuous" },
  { name = "c_id", kind = "continuous" },
  { name = "o_channel", kind = "categorical" },
]

[[tables]]
name = "orderline"
csv = "orderline.csv"
primary_key = "l_id"
columns = [
  { name = "l_id", kind = "continuous" },
  { name = "o_id", kind = "continuous" },
  { name = "l_price", kind = "continuous" },
]

[[foreign_keys]]
table = "customer"
column = "s_id"
references = "state.s_id"

[[foreign_keys]]
table = "orders"
column = "c_id"
references = "customer.c_id"

[[foreign_keys]]
table = "orderline"
column = "o_id"
references = "orders.o_id"
"#,
    );
    write(dir, "state.csv", "s_id,s_name\n1,north\n2,south\n");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut c = String::from("c_id,s_id,c_age\n");
    for i in 0..20 {
        c += &format!("{i},{},{}\n", 1 + i % 2, 20 + rng.random_range(0..40));
    }
    write(dir, "customer.csv", &c);
    let mut o = String::from("o_id,c_id,o_channel\n");
    for i in 0..40 {
        o += &format!("{i},{},{}\n", rng.random_range(0..20), ["web", "shop"][i % 2]);
    }
    write(dir, "orders.csv", &o);
    let mut l = String::from("l_id,o_id,l_price\n");
    for i in 0..60 {
        l += &format!("{i},{},{}\n", rng.random_range(0..40), rng.random_range(1..100));
    }
    write(dir, "orderline.csv", &l);
    Database::load(load_schema(&dir.join("schema.toml")).unwrap()).unwrap()
}

/// Dependency values of the worked ensemble example.
pub fn fixture() -> BTreeMap<(String, String), f64> {
    [
        ("customer", "orders", 0.6),
        ("orders", "orderline", 0.7),
        ("customer", "state", 0.6),
        ("orders", "state", 0.2),
        ("customer", "orderline", 0.5),
        ("orderline", "state", 0.1),
    ]
    .into_iter()
    .map(|(a, b, v)| ((a.to_string(), b.to_string()), v))
    .collect()
}


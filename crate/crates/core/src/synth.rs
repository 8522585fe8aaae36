//! Reproducible synthetic shop database with label rules over joins.
//!
//! Three tables: `users`, `products` and `orders`, where each order
//! references a user and a product. Each user has a hidden spending level
//! that drives its order amounts and a hidden price preference that drives
//! which products it buys, so the bundled tasks are learnable from features
//! one and two hops away.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{CellValue, ColumnSpec, Modality, RelationalDatabase, SchemaManifest, Table, TableSpec};
use crate::task::{median, LabelRule, TaskKind, TaskSpec};

/// 2020-01-01T00:00:00Z.
pub const START_TIME: i64 = 1_577_836_800;
/// 2024-01-01T00:00:00Z.
pub const END_TIME: i64 = 1_704_067_200;

const COUNTRIES: [&str; 8] = ["de", "fr", "us", "jp", "br", "in", "ke", "ca"];
const CATEGORIES: [&str; 12] = [
    "books", "garden", "toys", "audio", "kitchen", "sports", "office", "beauty", "games", "tools", "music", "pets",
];
const CHANNELS: [&str; 3] = ["web", "app", "store"];
const WORDS: [&str; 24] = [
    "good", "fast", "quality", "cheap", "fresh", "classic", "modern", "light", "strong", "soft", "bright", "small",
    "large", "simple", "smart", "quiet", "warm", "cool", "green", "blue", "red", "black", "white", "gold",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDbSpec {
    pub seed: u64,
    pub users: usize,
    pub products: usize,
    pub max_orders_per_user: usize,
    /// Fraction of orders whose user reference points at no user.
    pub dangling_fraction: f64,
    /// Fraction of order notes left empty.
    pub missing_fraction: f64,
}

impl Default for SyntheticDbSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            users: 400,
            products: 120,
            max_orders_per_user: 9,
            dangling_fraction: 0.01,
            missing_fraction: 0.3,
        }
    }
}

impl SyntheticDbSpec {
    pub fn validate(&self) -> Result<()> {
        if self.products == 0 {
            return Err(Error::Config("synthetic blueprint needs at least one product".into()));
        }
        for (name, f) in [("dangling_fraction", self.dangling_fraction), ("missing_fraction", self.missing_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("{name} = {f} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

pub fn shop_manifest() -> SchemaManifest {
    let users = TableSpec {
        name: "users".into(),
        time_column: Some("signup".into()),
        columns: vec![
            ColumnSpec::new("user_id", Modality::PrimaryKey),
            ColumnSpec::new("age", Modality::Numerical).with_description("age of the customer in years"),
            ColumnSpec::new("signup", Modality::Timestamp).with_description("account creation time"),
            ColumnSpec::new("country", Modality::Categorical),
            ColumnSpec::new("bio", Modality::Textual).with_description("free text profile"),
        ],
    };
    let products = TableSpec {
        name: "products".into(),
        time_column: Some("listed".into()),
        columns: vec![
            ColumnSpec::new("product_id", Modality::PrimaryKey),
            ColumnSpec::new("price", Modality::Numerical).with_description("list price in dollars"),
            ColumnSpec::new("category", Modality::Categorical),
            ColumnSpec::new("title", Modality::Textual),
            ColumnSpec::new("listed", Modality::Timestamp),
        ],
    };
    let orders = TableSpec {
        name: "orders".into(),
        time_column: Some("placed".into()),
        columns: vec![
            ColumnSpec::new("order_id", Modality::PrimaryKey),
            ColumnSpec::foreign_key("user_id", "users"),
            ColumnSpec::foreign_key("product_id", "products"),
            ColumnSpec::new("amount", Modality::Numerical).with_description("order total in dollars"),
            ColumnSpec::new("quantity", Modality::Numerical),
            ColumnSpec::new("placed", Modality::Timestamp).with_description("time the order was placed"),
            ColumnSpec::new("channel", Modality::Categorical),
            ColumnSpec::new("note", Modality::Textual),
        ],
    };
    SchemaManifest {
        tables: vec![users, products, orders],
    }
}

fn words<R: Rng>(rng: &mut R, n: usize) -> String {
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn time_between<R: Rng>(rng: &mut R, lo: i64, hi: i64) -> i64 {
    rng.random_range(lo..=hi)
}

pub fn generate_database(spec: &SyntheticDbSpec) -> Result<RelationalDatabase> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let manifest = shop_manifest();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let mut products = Vec::with_capacity(spec.products);
    let mut prices = Vec::with_capacity(spec.products);
    for p in 0..spec.products {
        let price = (10.0 + 490.0 * (p as f64 + 0.5) / spec.products as f64 * (1.0 + 0.05 * noise.sample(&mut rng)))
            .max(1.0);
        let price = (price * 100.0).round() / 100.0;
        prices.push(price);
        let n = rng.random_range(2..5);
        products.push(vec![
            CellValue::Category(format!("p{p:04}")),
            CellValue::Number(price),
            CellValue::Category(CATEGORIES[rng.random_range(0..CATEGORIES.len())].into()),
            CellValue::Text(words(&mut rng, n)),
            CellValue::Timestamp(time_between(&mut rng, START_TIME, START_TIME + 86_400 * 90)),
        ]);
    }

    let mut users = Vec::with_capacity(spec.users);
    let mut orders = Vec::new();
    let half = spec.products as f64 / 2.0;
    for u in 0..spec.users {
        let spend: f64 = rng.random();
        let taste: f64 = rng.random();
        let signup = time_between(&mut rng, START_TIME, END_TIME - 86_400 * 180);
        let n = rng.random_range(3..8);
        users.push(vec![
            CellValue::Category(format!("u{u:04}")),
            CellValue::Number(rng.random_range(18..80) as f64),
            CellValue::Timestamp(signup),
            CellValue::Category(COUNTRIES[rng.random_range(0..COUNTRIES.len())].into()),
            CellValue::Text(words(&mut rng, n)),
        ]);
        let count = rng.random_range(0..=spec.max_orders_per_user);
        for _ in 0..count {
            let centre = taste * spec.products as f64;
            let pick = (centre + half * 0.3 * noise.sample(&mut rng)).clamp(0.0, spec.products as f64 - 1.0) as usize;
            let amount = (20.0 + 180.0 * spend + 15.0 * noise.sample(&mut rng)).max(1.0);
            let user_ref = if rng.random::<f64>() < spec.dangling_fraction {
                format!("ghost{:04}", orders.len())
            } else {
                format!("u{u:04}")
            };
            let note = if rng.random::<f64>() < spec.missing_fraction {
                CellValue::Missing
            } else {
                let n = rng.random_range(1..4);
                CellValue::Text(words(&mut rng, n))
            };
            orders.push(vec![
                CellValue::Category(format!("o{:05}", orders.len())),
                CellValue::Category(user_ref),
                CellValue::Category(format!("p{pick:04}")),
                CellValue::Number((amount * 100.0).round() / 100.0),
                CellValue::Number(rng.random_range(1..6) as f64),
                CellValue::Timestamp(time_between(&mut rng, signup, END_TIME)),
                CellValue::Category(CHANNELS[rng.random_range(0..CHANNELS.len())].into()),
                note,
            ]);
        }
    }

    let t = &manifest.tables;
    let tables = vec![
        Table::new(t[0].clone(), users)?,
        Table::new(t[1].clone(), products)?,
        Table::new(t[2].clone(), orders)?,
    ];
    RelationalDatabase::new(manifest, tables)
}

fn child_means(db: &RelationalDatabase, value: &str, via_price: bool) -> Vec<f64> {
    let users = db.table("users").expect("shop schema");
    let orders = db.table("orders").expect("shop schema");
    let products = db.table("products").expect("shop schema");
    let mut sums = vec![(0.0, 0usize); users.len()];
    for o in 0..orders.len() {
        let Some(u) = orders.cell(o, "user_id").and_then(CellValue::as_key).and_then(|k| users.row_by_key(k)) else {
            continue;
        };
        let v = if via_price {
            orders
                .cell(o, "product_id")
                .and_then(CellValue::as_key)
                .and_then(|k| products.row_by_key(k))
                .and_then(|p| products.cell(p, "price").and_then(CellValue::as_number))
        } else {
            orders.cell(o, value).and_then(CellValue::as_number)
        };
        if let Some(v) = v {
            sums[u].0 += v;
            sums[u].1 += 1;
        }
    }
    sums.into_iter().filter(|s| s.1 > 0).map(|(s, n)| s / n as f64).collect()
}

/// Three classification tasks and one regression task over the shop
/// schema, thresholds set at medians so classes are balanced.
pub fn shop_tasks(db: &RelationalDatabase) -> Result<Vec<TaskSpec>> {
    let split = [0.7, 0.15, 0.15];
    let seed_time = Some(END_TIME);
    let spend = median(&mut child_means(db, "amount", false))
        .ok_or_else(|| Error::Config("synthetic database has no orders".into()))?;
    let taste = median(&mut child_means(db, "price", true)).unwrap_or(0.0);
    let mut prices: Vec<f64> = {
        let p = db.table("products").expect("shop schema");
        (0..p.len()).filter_map(|r| p.cell(r, "price").and_then(CellValue::as_number)).collect()
    };
    let price = median(&mut prices).unwrap_or(0.0);
    Ok(vec![
        TaskSpec {
            name: "user_high_spender".into(),
            kind: TaskKind::Classification,
            target_table: "users".into(),
            label: LabelRule::MeanChildAbove {
                child_table: "orders".into(),
                fk_column: "user_id".into(),
                value_column: "amount".into(),
                threshold: spend,
            },
            seed_time,
            split,
        },
        TaskSpec {
            name: "order_premium_product".into(),
            kind: TaskKind::Classification,
            target_table: "orders".into(),
            label: LabelRule::ParentAbove {
                fk_column: "product_id".into(),
                value_column: "price".into(),
                threshold: price,
            },
            seed_time,
            split,
        },
        TaskSpec {
            name: "user_premium_taste".into(),
            kind: TaskKind::Classification,
            target_table: "users".into(),
            label: LabelRule::MeanChildParentAbove {
                child_table: "orders".into(),
                fk_column: "user_id".into(),
                via_fk_column: "product_id".into(),
                value_column: "price".into(),
                threshold: taste,
            },
            seed_time,
            split,
        },
        TaskSpec {
            name: "user_mean_amount".into(),
            kind: TaskKind::Regression,
            target_table: "users".into(),
            label: LabelRule::MeanChild {
                child_table: "orders".into(),
                fk_column: "user_id".into(),
                value_column: "amount".into(),
            },
            seed_time,
            split,
        },
    ])
}

pub fn generate_synthetic_db(spec: &SyntheticDbSpec) -> Result<(RelationalDatabase, Vec<TaskSpec>)> {
    let db = generate_database(spec)?;
    let tasks = shop_tasks(&db)?;
    Ok((db, tasks))
}

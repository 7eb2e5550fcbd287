//! Prints a model as a Graphviz digraph. Exception overrides are red edges,
//! outcome branches dashed.
//!
//! ```text
//! cargo run --example export_dot -- server-main | dot -Tsvg > server-main.svg
//! ```

use netmbt::explorer::export_dot;
use netmbt::models::{Catalog, MODEL_NAMES};

fn main() {
    let catalog = Catalog::new();
    match std::env::args().nth(1) {
        Some(name) => match catalog.get(&name) {
            Some(spec) => print!("{}", export_dot(spec)),
            None => {
                eprintln!(
                    "unknown model {name}; try one of {}",
                    MODEL_NAMES.join(", ")
                );
                std::process::exit(2);
            }
        },
        None => {
            for (_, spec) in catalog.all() {
                print!("{}", export_dot(spec));
            }
        }
    }
}

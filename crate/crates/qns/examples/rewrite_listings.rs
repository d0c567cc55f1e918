//! Catalog-listing statements rewritten so that objects carrying the
//! hidden prefix never show up in their results. Covers `SHOW` forms,
//! the `information_schema` equivalents, and both the WHERE-present and
//! WHERE-absent shapes.
//!
//! ```sh
//! cargo run --example rewrite_listings
//! ```

use qns::resolver::{rewrite_listing, RewriteError};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let prefix = "dimaqs";
    let listings = [
        "SHOW DATABASES",
        "SHOW SCHEMAS",
        "SHOW TABLES",
        "SHOW TABLES FROM shop",
        "SHOW FULL TABLES IN shop WHERE Table_type = 'BASE TABLE'",
        "SHOW COLUMNS FROM shop.orders",
        "SELECT schema_name FROM information_schema.schemata",
        "SELECT table_name FROM information_schema.tables WHERE table_schema = 'shop'",
        "SELECT * FROM information_schema.columns",
        "SHOW TRIGGERS",
        "SHOW PLUGINS",
    ];

    for sql in listings {
        let r = rewrite_listing(sql, prefix)?;
        println!("  in: {sql}");
        if r.changed {
            println!(" out: {}", r.sql);
        } else {
            println!(" out: (unchanged) {}", r.note.unwrap_or("no note"));
        }
        println!();
    }

    // Statements that are not listings at all are refused; the caller
    // forwards them verbatim.
    for sql in ["SELECT * FROM orders", "UPDATE t SET x = 1"] {
        match rewrite_listing(sql, prefix) {
            Err(RewriteError::NotListing) => println!("not a listing, forward as-is: {sql}"),
            other => println!("unexpected: {other:?}"),
        }
    }
    Ok(())
}

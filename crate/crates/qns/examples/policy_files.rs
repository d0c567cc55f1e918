//! Policies are plain JSON files: write the built-in one out, tweak it,
//! load it back, and show how `resolve` picks between an explicit path,
//! the `QNS_POLICY` environment variable, and the built-in default.
//!
//! ```sh
//! cargo run --example policy_files
//! ```

use qns::policy::SecurityPolicy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("policy.json");

    let policy = SecurityPolicy::default_policy();
    println!(
        "built-in policy: {} places, {} transitions, timeout {}s",
        policy.places.len(),
        policy.transitions.len(),
        policy.default_timeout
    );
    println!("ransom pattern:  {}", policy.ransom_pattern);
    println!("matches \"pay 5 BTC\": {}", policy.matches_ransom("pay 5 BTC"));
    println!("matches \"Bitcoin\":   {}", policy.matches_ransom("Bitcoin"));

    policy.save(&path)?;
    println!("\nsaved to {}", path.display());

    // Edit the file the way an operator would, then load it back.
    let mut edited: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    edited["default_timeout"] = serde_json::json!(300);
    edited["notification_target"] = serde_json::json!("security@example.com");
    std::fs::write(&path, serde_json::to_string_pretty(&edited)?)?;

    let loaded = SecurityPolicy::load(&path)?;
    println!(
        "reloaded: timeout {}s, notify {}",
        loaded.default_timeout, loaded.notification_target
    );

    // Loading checks more than JSON shape: a policy whose transitions
    // reference unknown places is refused.
    let mut broken = edited.clone();
    broken["transitions"][0]["inputs"][0]["place"] = serde_json::json!("No_Such_Place");
    std::fs::write(&path, serde_json::to_string(&broken)?)?;
    match SecurityPolicy::load(&path) {
        Err(e) => println!("broken policy refused: {e}"),
        Ok(_) => println!("unexpectedly accepted"),
    }
    std::fs::write(&path, serde_json::to_string(&edited)?)?;

    // Precedence: explicit path, then QNS_POLICY, then the default.
    let (p, source) = SecurityPolicy::resolve(Some(path.as_path()))?;
    println!("\nexplicit path     -> {source} (timeout {}s)", p.default_timeout);

    std::env::set_var("QNS_POLICY", &path);
    let (p, source) = SecurityPolicy::resolve(None)?;
    println!("QNS_POLICY set    -> {source} (timeout {}s)", p.default_timeout);

    std::env::remove_var("QNS_POLICY");
    let (p, source) = SecurityPolicy::resolve(None)?;
    println!("nothing specified -> {source} (timeout {}s)", p.default_timeout);
    Ok(())
}

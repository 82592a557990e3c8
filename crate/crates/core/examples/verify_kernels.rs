//! Runs the built-in oracle suite, the same checks as `cgrad verify`.

fn main() -> cgrad::Result<()> {
    let checks = cgrad::verify::run_all()?;
    for c in &checks {
        println!("{} {}\n     {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().any(|c| !c.passed) {
        std::process::exit(1);
    }
    Ok(())
}

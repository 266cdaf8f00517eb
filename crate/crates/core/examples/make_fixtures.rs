//! Regenerates the pattern and material fixtures under `fixtures/`.

use std::path::Path;

use yarnshell::pattern::{
    plain_weave_matrix, satin_matrix, save_pattern, single_yarn_pattern, twill_matrix, woven_pattern, MaterialSpec,
};

const SPACING: f64 = 6e-4;
const AMPLITUDE: f64 = 1.1e-4;

fn material(name: &str, k1: f64, k2: f64, rho_yarn: f64, rho_shell: f64) -> MaterialSpec {
    MaterialSpec {
        name: name.into(),
        k1,
        k2,
        poisson: 0.3,
        rho_yarn,
        rho_shell,
        friction: 0.2,
        shrink_factor: None,
        reference_strain: 0.05,
    }
}

fn main() -> yarnshell::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    std::fs::create_dir_all(root.join("materials"))?;
    save_pattern(&woven_pattern(&plain_weave_matrix(), SPACING, AMPLITUDE, 4)?, &root.join("plain_weave.json"))?;
    save_pattern(&woven_pattern(&plain_weave_matrix(), SPACING, AMPLITUDE, 12)?, &root.join("plain_weave_fine.json"))?;
    save_pattern(&woven_pattern(&twill_matrix(), SPACING, AMPLITUDE, 4)?, &root.join("twill.json"))?;
    save_pattern(&woven_pattern(&satin_matrix(), SPACING, AMPLITUDE, 3)?, &root.join("satin.json"))?;
    save_pattern(&single_yarn_pattern(1e-3, 1e-3, 11)?, &root.join("single_yarn.json"))?;
    for m in [
        material("cotton", 1.2e10, 1.0e10, 1540.0, 0.136),
        material("wool", 5.0e9, 4.0e9, 1310.0, 0.12),
        material("polyester", 1.5e10, 1.2e10, 1380.0, 0.125),
    ] {
        std::fs::write(root.join(format!("materials/{}.json", m.name)), serde_json::to_string_pretty(&m)?)?;
    }
    Ok(())
}

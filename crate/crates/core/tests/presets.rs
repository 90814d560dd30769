use std::fs;
use std::path::{Path, PathBuf};

use hamgd::harness::{parse_config, preset_appendix_h};

fn preset_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets")
}

// Regenerate with HAMGD_BLESS=1 cargo test --test presets
#[test]
fn shipped_preset_files_match_builtin_presets() {
    let dir = preset_dir();
    let bless = std::env::var_os("HAMGD_BLESS").is_some();
    if bless {
        fs::create_dir_all(&dir).unwrap();
    }
    let presets = preset_appendix_h();
    for cfg in &presets {
        let path = dir.join(format!("{}.toml", cfg.label));
        if bless {
            fs::write(&path, cfg.to_toml().unwrap()).unwrap();
        }
        let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(&parse_config(&text, &path).unwrap(), cfg, "{}", path.display());
    }
    let shipped = fs::read_dir(&dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "toml"))
        .count();
    assert_eq!(shipped, presets.len());
}

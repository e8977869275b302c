//! Saves a populated store to disk, loads it back and checks that nothing
//! changed, then prints the audit trail.

use egomem::harness::{seed_store, walkthrough_scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = walkthrough_scenario(5);
    let (mut store, _) = seed_store(&scenario, "2024-05-13")?;
    let dir = std::env::temp_dir().join(format!("egomem-example-{}", std::process::id()));
    store.persist(&dir)?;

    let loaded = egomem::store::MemoryStore::load(&dir)?;
    loaded.check_integrity()?;
    assert_eq!(loaded.len(), store.len());
    assert_eq!(loaded.edges().count(), store.edges().count());
    println!("saved and reloaded {} users, {} edges from {}", loaded.len(), loaded.edges().count(), dir.display());
    for entry in std::fs::read_dir(&dir)? {
        let entry = entry?;
        println!("  {:<24} {:>6} bytes", entry.file_name().to_string_lossy(), entry.metadata()?.len());
    }
    println!("audit:");
    for record in loaded.audit() {
        println!("  {record:?}");
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

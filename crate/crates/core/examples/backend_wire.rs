//! The JSON documents exchanged with external backends, shown against the
//! mock handlers. Set `EGOMEM_FACE_ENCODER_URL` (and friends) to point a
//! kind at a real HTTP service instead.

use std::sync::Arc;

use egomem::backends::{call_backend, BackendConfig, BackendKind, Backends, DataRef, EncoderRequest};
use egomem::harness::walkthrough_scenario;
use egomem::verification::Modality;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = walkthrough_scenario(4);
    let world = scenario.world();
    let config = BackendConfig::all_mock(world.seed).with_env_overrides();
    config.validate()?;
    println!("endpoints:");
    for e in config.endpoints() {
        println!("  {:<14} {:?} (timeout {:?}, retries {})", e.kind.as_str(), e.transport, e.timeout(), e.retries);
    }
    let backends = Backends::from_config(&config, Arc::new(world))?;

    let request = EncoderRequest::new(Modality::Face, DataRef::FaceFrame { identity: 7, sample: 3 });
    let payload = serde_json::to_string(&request)?;
    println!("\nrequest  {payload}");
    let response = call_backend(backends.client(BackendKind::FaceEncoder), &payload)?;
    println!("response {}...", &response[..response.len().min(120)]);

    let intro = &scenario.intro_dialogs[0];
    let keys: Vec<u32> = (0..intro.turns.len()).map(|t| intro.utterance_key(t)).collect();
    println!("\ntranscript of utterances {keys:?}:\n{}", backends.transcribe(&keys)?);
    Ok(())
}

//! The portable weight container: inspection, exact round trip and the
//! fingerprint check against a different architecture.

use dynaconv::model::{Model, ModelSpec, WeightStore};

fn main() -> dynaconv::Result<()> {
    let spec = ModelSpec::mini_residual([8, 16, 32, 64], 10);
    let model = Model::<f32>::build(&spec, 42)?;
    let store = model.to_store()?;
    let bytes = store.to_bytes()?;
    println!("{} bytes, fingerprint {}", bytes.len(), store.fingerprint().unwrap_or_default());
    for t in store.tensors.iter().take(6) {
        println!("  {:<36} {:?}", t.name, t.dims);
    }
    println!("  ... {} tensors", store.tensors.len());

    let back = WeightStore::from_bytes(&bytes)?;
    assert_eq!(back.to_bytes()?, bytes);
    let reloaded = Model::from_store(&spec, &back)?;
    assert_eq!(reloaded.to_store()?.to_bytes()?, bytes);
    println!("round trip is byte-identical");

    let wider = ModelSpec::mini_residual([16, 16, 32, 64], 10);
    match Model::from_store(&wider, &back) {
        Err(e) => println!("loading into a different spec fails: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}

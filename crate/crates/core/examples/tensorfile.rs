//! Named tensors in the binary container, including a model checkpoint.

use seqnav::dataset::tensorfile::{Tensor, TensorFile};
use seqnav::learning::{ModelConfig, PolicyModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut f = TensorFile::new();
    f.insert("depth", Tensor::f32(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, f32::NAN]))?;
    f.insert("labels", Tensor::u8(&[2, 3], vec![0, 1, 1, 2, 2, 255]))?;
    f.insert("pose", Tensor::f64(&[3], vec![1.5, -2.0, 0.25]))?;
    let bytes = f.to_bytes();
    println!("{} tensors, {} bytes", f.len(), bytes.len());

    let back = TensorFile::from_bytes(&bytes)?;
    for name in back.names() {
        let t = back.get(name)?;
        println!("  {name:<7} {:?} {}", t.dims, t.data.type_name());
    }
    println!("pose {:?}", back.f64s("pose")?);

    // truncation is detected, not silently accepted
    println!("truncated: {}", TensorFile::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err());

    let model = PolicyModel::new(ModelConfig::default(), 5);
    let ckpt = model.to_tensorfile()?;
    let restored = PolicyModel::from_tensorfile(&TensorFile::from_bytes(&ckpt.to_bytes())?)?;
    println!("checkpoint: {} tensors, identical {}", ckpt.len(), restored == model);
    Ok(())
}

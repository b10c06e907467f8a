//! The meta scaling and shifting blocks on hand-made embeddings.
//!
//! A weak id (small norm) lets the meta id take over; a strong id keeps most
//! of its own direction. Neither network passes gradient back into the
//! embedding it reads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use msnet::autodiff::{ParamKind, ParamStore, Tape};
use msnet::seqmodel::{meta_id, meta_scale, meta_shift, MetaNetParams};
use msnet::Tensor;

fn main() -> msnet::Result<()> {
    let (d_id, d_side) = (4, 3);
    let mut store = ParamStore::new();
    let meta = MetaNetParams::new("meta", d_id, d_side, 8);
    meta.init(&mut store, &mut ChaCha8Rng::seed_from_u64(3))?;
    store.insert(
        "ids",
        ParamKind::Dense,
        Tensor::from_rows(&[&[0.01, -0.02, 0.01, 0.0], &[1.5, -0.8, 0.4, 1.1]])?,
    )?;
    store.insert("side", ParamKind::Dense, Tensor::from_rows(&[&[0.3, -0.5, 0.9], &[0.3, -0.5, 0.9]])?)?;

    let mut tape = Tape::new(&store);
    let ids = tape.param("ids")?;
    let side = tape.param("side")?;
    let generated = meta_id(&mut tape, side, &meta)?;
    let shifted = meta_shift(&mut tape, side, ids, &meta)?;
    let scaled = meta_scale(&mut tape, ids, side, &meta)?;

    for (row, name) in ["weak id", "strong id"].iter().enumerate() {
        let id = tape.value(ids).row(row).to_vec();
        let m = tape.value(generated).row(row).to_vec();
        let s = tape.value(shifted).row(row).to_vec();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (mn, idn) = (norm(&m), norm(&id));
        println!("{name}: |id| = {idn:.3}, |meta id| = {mn:.3}, blend weight {:.3}", mn / (mn + idn));
        println!("  shifted id  {s:.3?}");
        println!("  scaled side {:.3?}", tape.value(scaled).row(row));
    }

    let out = tape.concat_cols(&[shifted, scaled])?;
    let loss = tape.sum(out);
    let grads = tape.backward(loss)?;
    for name in ["ids", "side"] {
        let g = grads.get(name).map(|g| g.to_dense());
        println!("d loss / d {name}: {:.3?}", g.map(|t| t.into_values()));
    }
    Ok(())
}

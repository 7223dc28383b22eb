//! Builds the pre-integrated environment BRDF table, prints a few entries and
//! writes it as a PFM (R = scale, G = bias).
//!
//! cargo run --release --example dfg_table -- [resolution] [out.pfm]

use gir::envlight::build_dfg_lut;
use gir::io::Pfm;

fn main() -> gir::Result<()> {
    let mut args = std::env::args().skip(1);
    let res: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(64);
    let out = args.next().unwrap_or_else(|| "dfg.pfm".into());
    let lut = build_dfg_lut(res)?;
    for (cos_v, r) in [(1.0, 0.0), (1.0, 1.0), (0.5, 0.5), (0.1, 0.3), (0.05, 0.9)] {
        let s = lut.sample(cos_v, r);
        println!("cos_v {cos_v:4} roughness {r:3}: scale {:.4} bias {:.4}", s.scale, s.bias);
    }
    let data = lut.entries().iter().flat_map(|e| [e[0] as f32, e[1] as f32, 0.0]).collect();
    Pfm::new(res, res, 3, data)?.save(&out)?;
    println!("wrote {out}");
    Ok(())
}

//! Extended PLY scene archives.
//!
//! Binary little-endian, one `vertex` element per Gaussian with double
//! properties: position, log-scales, quaternion, opacity logit, albedo,
//! roughness, metallic, 48 indirect SH coefficients and the back-face color.
//! The scene seed and back-color draw counter travel in a header comment.
//! Plain 3D Gaussian splatting files load with default materials.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{GirError, Result};
use crate::math::{self, Rgb, Vec3};
use crate::scene::{GaussianParams, GaussianScene};

const SH_LEN: usize = 48;

/// Property names in file order.
pub fn property_names() -> Vec<String> {
    let mut v: Vec<String> = ["x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    v.extend(["albedo_0", "albedo_1", "albedo_2", "roughness", "metallic"].map(String::from));
    v.extend((0..SH_LEN).map(|i| format!("sh_{i}")));
    v.extend(["back_0", "back_1", "back_2"].map(String::from));
    v
}

fn values_of(g: &GaussianParams) -> Vec<f64> {
    let mut v = Vec::with_capacity(11 + 5 + SH_LEN + 3);
    v.extend(g.position.iter());
    v.extend(g.log_scale.iter());
    v.extend(g.rotation);
    v.push(g.opacity_logit);
    v.extend(g.albedo.iter());
    v.push(g.roughness);
    v.push(g.metallic);
    for c in &g.indirect_sh.coeffs {
        v.extend(c);
    }
    v.extend(g.back_color.iter());
    v
}

pub fn write_scene(mut w: impl Write, scene: &GaussianScene) -> Result<()> {
    let names = property_names();
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment gir seed {} draws {}\nelement vertex {}\n",
        scene.seed,
        scene.draws,
        scene.len()
    );
    for n in &names {
        header.push_str(&format!("property double {n}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    let mut body = Vec::with_capacity(scene.len() * names.len() * 8);
    for g in &scene.gaussians {
        for v in values_of(g) {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&body)?;
    Ok(())
}

pub fn save_scene(path: impl AsRef<Path>, scene: &GaussianScene) -> Result<()> {
    let mut out = Vec::new();
    write_scene(&mut out, scene)?;
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

/// A loaded archive plus any vertex properties this crate does not know.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScene {
    pub scene: GaussianScene,
    pub extra_names: Vec<String>,
    /// Per Gaussian, the values of `extra_names` in order.
    pub extra_values: Vec<Vec<f64>>,
    /// True when material fields were missing and defaulted.
    pub migrated: bool,
}

fn bad(detail: impl Into<String>) -> GirError {
    GirError::format("PLY", detail)
}

pub fn read_scene(r: impl Read) -> Result<LoadedScene> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<_>| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("truncated header"));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut r)? != "ply" {
        return Err(bad("missing `ply` magic"));
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut seed = 0u64;
    let mut draws: Option<u64> = None;
    let mut in_vertex = false;
    loop {
        let l = next_line(&mut r)?;
        let t: Vec<&str> = l.split_whitespace().collect();
        match t.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", _] => {}
            ["format", f, ..] => return Err(bad(format!("unsupported format `{f}`"))),
            ["comment", "gir", "seed", s, "draws", d] => {
                seed = s.parse().map_err(|_| bad("bad seed comment"))?;
                draws = Some(d.parse().map_err(|_| bad("bad draws comment"))?);
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse().map_err(|_| bad("bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] if in_vertex => return Err(bad("list properties are not supported")),
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty).ok_or_else(|| bad(format!("unknown type `{ty}`")))?;
                props.push((name.to_string(), s));
            }
            ["property", ..] => {}
            _ => return Err(bad(format!("unexpected header line `{l}`"))),
        }
    }
    let n = count.ok_or_else(|| bad("no vertex element"))?;
    if n == 0 {
        return Err(GirError::EmptyScene);
    }
    let idx = |name: &str| props.iter().position(|(p, _)| p == name);
    let required = ["x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity"];
    let geo: Vec<usize> = required
        .iter()
        .map(|k| idx(k).ok_or_else(|| bad(format!("missing property `{k}`"))))
        .collect::<Result<_>>()?;
    let names = property_names();
    let material: Vec<Option<usize>> = names[11..].iter().map(|k| idx(k)).collect();
    let known: Vec<bool> = props.iter().map(|(p, _)| names.contains(p)).collect();
    let migrated = material[..5].iter().any(Option::is_none);
    if migrated {
        log::warn!("PLY has no material properties; using albedo 0.5, roughness 0.8, metallic 0");
    }

    let stride: usize = props.iter().map(|(_, s)| s.size()).sum();
    let mut body = vec![0u8; stride * n];
    r.read_exact(&mut body).map_err(|_| bad("truncated vertex data"))?;
    let mut scene = GaussianScene::new(seed);
    let mut extra_values = Vec::with_capacity(n);
    let extra_names: Vec<String> = props
        .iter()
        .zip(&known)
        .filter(|(_, k)| !**k)
        .map(|((p, _), _)| p.clone())
        .collect();
    let mut row = vec![0.0; props.len()];
    for v in 0..n {
        let mut off = v * stride;
        for (k, (_, s)) in props.iter().enumerate() {
            row[k] = s.decode(&body[off..off + s.size()]);
            off += s.size();
        }
        let mut g = GaussianParams::new(Vec3::zeros(), Vec3::repeat(1.0), math::IDENTITY_QUAT);
        g.position = Vec3::new(row[geo[0]], row[geo[1]], row[geo[2]]);
        g.log_scale = Vec3::new(row[geo[3]], row[geo[4]], row[geo[5]]);
        g.rotation = [row[geo[6]], row[geo[7]], row[geo[8]], row[geo[9]]];
        g.opacity_logit = row[geo[10]];
        let get = |k: usize| material[k].map(|i| row[i]);
        if let (Some(a0), Some(a1), Some(a2)) = (get(0), get(1), get(2)) {
            g.albedo = Rgb::new(a0, a1, a2);
        }
        if let Some(r) = get(3) {
            g.roughness = r;
        }
        if let Some(m) = get(4) {
            g.metallic = m;
        }
        for (j, c) in g.indirect_sh.coeffs.iter_mut().enumerate() {
            for (ch, slot) in c.iter_mut().enumerate() {
                if let Some(x) = get(5 + 3 * j + ch) {
                    *slot = x;
                }
            }
        }
        match (get(5 + SH_LEN), get(6 + SH_LEN), get(7 + SH_LEN)) {
            (Some(b0), Some(b1), Some(b2)) => {
                g.back_color = Rgb::new(b0, b1, b2);
                scene.gaussians.push(g);
            }
            _ => scene.push(g),
        }
        extra_values.push(props.iter().enumerate().filter(|(k, _)| !known[*k]).map(|(k, _)| row[k]).collect());
    }
    if let Some(d) = draws {
        scene.draws = d;
    }
    Ok(LoadedScene {
        scene,
        extra_names,
        extra_values,
        migrated,
    })
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<LoadedScene> {
    let p = path.as_ref();
    let f = std::fs::File::open(p).map_err(|_| GirError::MissingFile(p.display().to_string()))?;
    read_scene(f)
}

/// Saves a loaded archive; properties this crate does not know are dropped.
pub fn save_loaded(path: impl AsRef<Path>, loaded: &LoadedScene) -> Result<()> {
    if !loaded.extra_names.is_empty() {
        log::warn!("dropping unknown PLY properties: {}", loaded.extra_names.join(", "));
    }
    save_scene(path, &loaded.scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn any_scene() -> impl Strategy<Value = GaussianScene> {
        (1usize..6, any::<u64>(), prop::collection::vec(any::<u64>(), 70)).prop_map(|(n, seed, bits)| {
            let mut s = GaussianScene::new(seed);
            for i in 0..n {
                let f = |k: usize| f64::from_bits(bits[(i * 7 + k) % bits.len()] & 0x7FEF_FFFF_FFFF_FFFF);
                let mut g = GaussianParams::new(Vec3::new(f(0), f(1), f(2)), Vec3::repeat(0.1), [f(3), f(4), f(5), f(6)]);
                g.roughness = f(7);
                g.indirect_sh.coeffs[5][1] = f(8);
                s.push(g);
            }
            s
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(scene in any_scene()) {
            let mut a = Vec::new();
            write_scene(&mut a, &scene).unwrap();
            let loaded = read_scene(&a[..]).unwrap();
            prop_assert!(!loaded.migrated);
            prop_assert!(loaded.extra_names.is_empty());
            let mut b = Vec::new();
            write_scene(&mut b, &loaded.scene).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(loaded.scene.draws, scene.draws);
        }
    }

    fn vanilla_ply(n: usize) -> Vec<u8> {
        let props = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"];
        let mut h = format!("ply\nformat binary_little_endian 1.0\nelement vertex {n}\n");
        for p in props {
            h.push_str(&format!("property float {p}\n"));
        }
        h.push_str("end_header\n");
        let mut b = h.into_bytes();
        for i in 0..n {
            for (k, _) in props.iter().enumerate() {
                b.extend_from_slice(&((i * 100 + k) as f32 * 0.01).to_le_bytes());
            }
        }
        b
    }

    #[test]
    fn vanilla_splats_get_default_materials() {
        let loaded = read_scene(&vanilla_ply(3)[..]).unwrap();
        assert!(loaded.migrated);
        assert_eq!(loaded.scene.len(), 3);
        let g = &loaded.scene.gaussians[1];
        assert_eq!(g.albedo, Rgb::repeat(0.5));
        assert_eq!(g.roughness, 0.8);
        assert_eq!(g.metallic, 0.0);
        assert!((g.position.x - 1.0).abs() < 1e-6);
        assert_eq!(loaded.extra_names, vec!["nx", "ny", "nz", "f_dc_0"]);
        assert!((loaded.extra_values[1][3] - 1.06).abs() < 1e-6);
    }

    #[test]
    fn malformed_headers_are_rejected() {
        assert!(matches!(read_scene(&vanilla_ply(0)[..]), Err(GirError::EmptyScene)));
        assert!(read_scene(&b"plx\n"[..]).is_err());
        assert!(read_scene(&b"ply\nformat ascii 1.0\nend_header\n"[..]).is_err());
        assert!(read_scene(&b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty double x\nend_header\n"[..]).is_err());
        let mut t = vanilla_ply(2);
        t.truncate(t.len() - 3);
        assert!(read_scene(&t[..]).is_err());
    }
}

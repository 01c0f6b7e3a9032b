//! 4D vertex-sequence ingestion: OBJ frame directories and the `.vseq`
//! binary container (see docs/FORMATS.md for the byte-exact layout).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Point3;

use crate::error::{Error, Result};

const VSEQ_MAGIC: &[u8; 4] = b"VSEQ";
const VSEQ_VERSION: u32 = 1;

/// A temporally consistent vertex sequence: F frames of N 3D positions, with
/// optional triangle faces shared across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSequence {
    frames: Vec<Vec<Point3<f64>>>,
    faces: Vec<[u32; 3]>,
    canonical: usize,
}

impl VertexSequence {
    /// Builds and validates a sequence. The canonical frame defaults to 0.
    pub fn new(frames: Vec<Vec<Point3<f64>>>, faces: Vec<[u32; 3]>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InsufficientFrames("sequence has no frames".into()));
        }
        let n = frames[0].len();
        for (f, frame) in frames.iter().enumerate() {
            if frame.len() != n {
                return Err(Error::InconsistentTopology(format!(
                    "frame {f} has {} vertices, expected {n}",
                    frame.len()
                )));
            }
            if frame.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
                return Err(Error::ShapeError(format!(
                    "frame {f} contains non-finite positions"
                )));
            }
        }
        if n == 0 {
            return Err(Error::ShapeError("frames have zero vertices".into()));
        }
        for face in &faces {
            if face.iter().any(|&v| v as usize >= n) {
                return Err(Error::IndexError(format!(
                    "face references vertex {} of {n}",
                    face.iter().max().unwrap()
                )));
            }
        }
        let seq = VertexSequence {
            frames,
            faces,
            canonical: 0,
        };
        if seq.bbox_diagonal() <= 0.0 {
            return Err(Error::ShapeError(
                "degenerate sequence: bounding box diagonal is zero".into(),
            ));
        }
        Ok(seq)
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.frames[0].len()
    }

    pub fn frame(&self, f: usize) -> &[Point3<f64>] {
        &self.frames[f]
    }

    pub fn frames(&self) -> &[Vec<Point3<f64>>] {
        &self.frames
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn canonical_index(&self) -> usize {
        self.canonical
    }

    pub fn canonical_frame(&self) -> &[Point3<f64>] {
        &self.frames[self.canonical]
    }

    /// Bounding-box diagonal over every frame, in scene units.
    pub fn bbox_diagonal(&self) -> f64 {
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for frame in &self.frames {
            for p in frame {
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
        }
        (hi - lo).norm()
    }

    /// A sub-sequence restricted to frames `[0, count)`.
    pub fn prefix(&self, count: usize) -> Result<VertexSequence> {
        if count == 0 || count > self.frames.len() {
            return Err(Error::IndexError(format!(
                "prefix of {count} frames from a {}-frame sequence",
                self.frames.len()
            )));
        }
        VertexSequence::new(self.frames[..count].to_vec(), self.faces.clone())
    }
}

/// Loads a sequence from a directory of per-frame OBJ files (lexicographic
/// frame order) or from a single `.vseq` file.
pub fn load_sequence(path: &Path) -> Result<VertexSequence> {
    if path.is_dir() {
        load_obj_dir(path)
    } else {
        load_vseq(path)
    }
}

fn load_obj_dir(dir: &Path) -> Result<VertexSequence> {
    let mut names: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(format!("reading directory {}", dir.display()), e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .map(|x| x.eq_ignore_ascii_case("obj"))
                .unwrap_or(false)
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::InsufficientFrames(format!(
            "no .obj files in {}",
            dir.display()
        )));
    }

    let mut frames = Vec::with_capacity(names.len());
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for (fi, name) in names.iter().enumerate() {
        let (verts, f) = read_obj(name)
            .map_err(|e| Error::io(format!("frame {fi} ({})", name.display()), e))?;
        if fi == 0 {
            faces = f;
        } else if frames[0] != verts && verts.len() != frames[0].len() {
            return Err(Error::InconsistentTopology(format!(
                "frame {fi} ({}) has {} vertices, expected {}",
                name.display(),
                verts.len(),
                frames[0].len()
            )));
        }
        frames.push(verts);
    }
    VertexSequence::new(frames, faces)
}

fn read_obj(path: &Path) -> std::io::Result<(Vec<Point3<f64>>, Vec<[u32; 3]>)> {
    let file = fs::File::open(path)?;
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut c = [0.0f64; 3];
                for v in c.iter_mut() {
                    *v = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad_data("malformed vertex line"))?;
                }
                verts.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let ids: Vec<u32> = it
                    .map(|tok| {
                        tok.split('/')
                            .next()
                            .and_then(|s| s.parse::<i64>().ok())
                            .filter(|&v| v >= 1)
                            .map(|v| (v - 1) as u32)
                            .ok_or_else(|| bad_data("malformed face index"))
                    })
                    .collect::<std::io::Result<_>>()?;
                // Triangulate polygons as a fan.
                for k in 2..ids.len() {
                    faces.push([ids[0], ids[k - 1], ids[k]]);
                }
            }
            _ => {}
        }
    }
    Ok((verts, faces))
}

fn bad_data(msg: &str) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg)
}

/// Writes a sequence as one OBJ file per frame (`frame_0000.obj`, ...).
pub fn save_obj_dir(seq: &VertexSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    for (fi, frame) in seq.frames().iter().enumerate() {
        let path = dir.join(format!("frame_{fi:04}.obj"));
        let file = fs::File::create(&path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
            for p in frame {
                writeln!(w, "v {} {} {}", p.x, p.y, p.z)?;
            }
            for f in seq.faces() {
                writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
            }
            Ok(())
        };
        write(&mut w).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok(())
}

/// Writes the binary `.vseq` container (little-endian, O(1) frame seeking).
pub fn save_vseq(seq: &VertexSequence, path: &Path) -> Result<()> {
    let file = fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        w.write_all(VSEQ_MAGIC)?;
        w.write_all(&VSEQ_VERSION.to_le_bytes())?;
        w.write_all(&(seq.frame_count() as u32).to_le_bytes())?;
        w.write_all(&(seq.vertex_count() as u32).to_le_bytes())?;
        w.write_all(&(seq.faces().len() as u32).to_le_bytes())?;
        for f in seq.faces() {
            for &v in f {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for frame in seq.frames() {
            for p in frame {
                for a in 0..3 {
                    w.write_all(&p[a].to_le_bytes())?;
                }
            }
        }
        Ok(())
    };
    write(&mut w).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads a `.vseq` container written by [`save_vseq`].
pub fn load_vseq(path: &Path) -> Result<VertexSequence> {
    let file = fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut r = BufReader::new(file);
    let ctx = |e| Error::io(format!("reading {}", path.display()), e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(ctx)?;
    if &magic != VSEQ_MAGIC {
        return Err(Error::CorruptArchive(format!(
            "bad vseq magic {:?} in {}",
            magic,
            path.display()
        )));
    }
    let version = read_u32(&mut r).map_err(ctx)?;
    if version != VSEQ_VERSION {
        return Err(Error::CorruptArchive(format!(
            "unsupported vseq version {version}"
        )));
    }
    let f = read_u32(&mut r).map_err(ctx)? as usize;
    let n = read_u32(&mut r).map_err(ctx)? as usize;
    let face_count = read_u32(&mut r).map_err(ctx)? as usize;

    let mut faces = Vec::with_capacity(face_count);
    for _ in 0..face_count {
        faces.push([
            read_u32(&mut r).map_err(ctx)?,
            read_u32(&mut r).map_err(ctx)?,
            read_u32(&mut r).map_err(ctx)?,
        ]);
    }
    let mut frames = Vec::with_capacity(f);
    for fi in 0..f {
        let mut frame = Vec::with_capacity(n);
        for _ in 0..n {
            let mut c = [0.0f64; 3];
            for v in c.iter_mut() {
                *v = read_f64(&mut r)
                    .map_err(|e| Error::io(format!("frame {fi} of {}", path.display()), e))?;
            }
            frame.push(Point3::new(c[0], c[1], c[2]));
        }
        frames.push(frame);
    }
    VertexSequence::new(frames, faces)
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn tmp_dir(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("skelebones_seq_{name}_{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn write_obj(path: &Path, verts: &[[f64; 3]]) {
        let mut f = fs::File::create(path).unwrap();
        for v in verts {
            writeln!(f, "v {} {} {}", v[0], v[1], v[2]).unwrap();
        }
    }

    fn cube(offset: f64) -> Vec<[f64; 3]> {
        let mut v = Vec::new();
        for x in 0..2 {
            for y in 0..2 {
                for z in 0..2 {
                    v.push([x as f64 + offset, y as f64, z as f64]);
                }
            }
        }
        v
    }

    #[test]
    fn loads_obj_directory_in_order() {
        let dir = tmp_dir("order");
        write_obj(&dir.join("frame_0002.obj"), &cube(2.0));
        write_obj(&dir.join("frame_0000.obj"), &cube(0.0));
        write_obj(&dir.join("frame_0001.obj"), &cube(1.0));
        let seq = load_sequence(&dir).unwrap();
        assert_eq!(seq.frame_count(), 3);
        assert_eq!(seq.vertex_count(), 8);
        // Lexicographic frame order regardless of directory enumeration.
        assert_eq!(seq.frame(0)[0].x, 0.0);
        assert_eq!(seq.frame(1)[0].x, 1.0);
        assert_eq!(seq.frame(2)[0].x, 2.0);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rejects_inconsistent_vertex_count() {
        let dir = tmp_dir("incons");
        write_obj(&dir.join("a.obj"), &cube(0.0));
        write_obj(&dir.join("b.obj"), &cube(0.0)[..7].to_vec().as_slice());
        let err = load_sequence(&dir).unwrap_err();
        assert!(matches!(err, Error::InconsistentTopology(_)), "{err}");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn vseq_round_trip_is_bitwise() {
        let frames = vec![
            cube(0.0).iter().map(|v| Point3::new(v[0], v[1], v[2])).collect(),
            cube(0.125).iter().map(|v| Point3::new(v[0], v[1], v[2])).collect(),
        ];
        let faces = vec![[0u32, 1, 2], [4, 5, 6]];
        let seq = VertexSequence::new(frames, faces).unwrap();
        let dir = tmp_dir("vseq");
        let path = dir.join("seq.vseq");
        save_vseq(&seq, &path).unwrap();
        let back = load_vseq(&path).unwrap();
        assert_eq!(seq, back);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rejects_degenerate_and_empty() {
        assert!(VertexSequence::new(vec![], vec![]).is_err());
        let one = vec![vec![Point3::origin(); 4]];
        assert!(matches!(
            VertexSequence::new(one, vec![]),
            Err(Error::ShapeError(_))
        ));
    }
}

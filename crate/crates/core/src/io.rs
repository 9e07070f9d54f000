//! WAV input/output and NPY tensor dumps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Audio<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

/// Read a PCM or float WAV file. Multichannel files keep the first channel.
pub fn read_wav<T: Scalar>(path: &Path) -> Result<Audio<T>> {
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let ch = spec.channels.max(1) as usize;
    let samples: Vec<T> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .step_by(ch)
            .map(|v| v.map(|x| T::from_f64_lossy(x as f64)))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .step_by(ch)
                .map(|v| v.map(|x| T::from_f64_lossy(x as f64 * scale)))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    Ok(Audio { samples, sample_rate: spec.sample_rate })
}

/// Write mono 16-bit PCM, clipping to [-1, 1].
pub fn write_wav<T: Scalar>(path: &Path, samples: &[T], sample_rate: u32) -> Result<()> {
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let spec = hound::WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &v in samples {
        let x = v.as_f64().clamp(-1.0, 1.0);
        w.write_sample((x * 32767.0).round() as i16).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

/// Write a tensor as NPY v1.0, little-endian float32, C order.
///
/// Header: `\x93NUMPY`, version 1.0, u16 header length, then a Python dict
/// literal `{'descr': '<f4', 'fortran_order': False, 'shape': (..), }`
/// padded with spaces to a 64-byte boundary.
pub fn write_npy<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let shape = match t.shape() {
        [n] => format!("({n},)"),
        dims => format!("({})", dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")),
    };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {shape}, }}");
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let io = |e| Error::io(path, e);
    let mut f = BufWriter::new(File::create(path).map_err(io)?);
    f.write_all(b"\x93NUMPY\x01\x00").map_err(io)?;
    f.write_all(&(header.len() as u16).to_le_bytes()).map_err(io)?;
    f.write_all(header.as_bytes()).map_err(io)?;
    for &v in t.data() {
        f.write_all(&(v.as_f64() as f32).to_le_bytes()).map_err(io)?;
    }
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f64> = (0..500).map(|i| (i as f64 * 0.05).sin() * 0.7).collect();
        write_wav(&p, &x, 4000).unwrap();
        let a = read_wav::<f64>(&p).unwrap();
        assert_eq!(a.sample_rate, 4000);
        assert_eq!(a.samples.len(), 500);
        assert!(a.samples.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-4));
    }

    #[test]
    fn stereo_keeps_first_channel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = hound::WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for i in 0..10i16 {
            w.write_sample(i * 100).unwrap();
            w.write_sample(-1000i16).unwrap();
        }
        w.finalize().unwrap();
        let a = read_wav::<f32>(&p).unwrap();
        assert_eq!(a.samples.len(), 10);
        assert!(a.samples.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn npy_header_is_aligned() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.npy");
        write_npy(&p, &Tensor::<f64>::full(&[3, 4, 5], 1.5)).unwrap();
        let b = std::fs::read(&p).unwrap();
        assert_eq!(&b[..6], b"\x93NUMPY");
        let hl = u16::from_le_bytes([b[8], b[9]]) as usize;
        assert_eq!((10 + hl) % 64, 0);
        let h = std::str::from_utf8(&b[10..10 + hl]).unwrap();
        assert!(h.contains("'shape': (3, 4, 5)") && h.contains("<f4"));
        assert_eq!(b.len(), 10 + hl + 60 * 4);
        assert_eq!(f32::from_le_bytes(b[10 + hl..14 + hl].try_into().unwrap()), 1.5);
    }

    #[test]
    fn missing_file_is_a_wav_error() {
        assert!(matches!(read_wav::<f32>(Path::new("/nonexistent/x.wav")), Err(Error::Wav { .. })));
    }
}

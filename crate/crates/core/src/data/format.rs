//! The `TCD1` dataset container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! header:  "TCD1" | u32 version | u32 Dv | u32 Da | u32 K | u64 count | u64 taxonomy checksum
//! record:  u32 id length | id UTF-8
//!          u32 rows | u32 cols | rows·cols f32      (video)
//!          u32 rows | u32 cols | rows·cols f32      (audio)
//!          u32 scenes | scenes × u32 start
//!          u32 K | ⌈K/8⌉ bytes truth bitmap, bit i of byte i/8 is label i
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, Result, VideoRecord};
use crate::taxonomy::LabelSet;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"TCD1";
pub const VERSION: u32 = 1;
/// Bytes in the fixed header.
pub const HEADER_LEN: u64 = 4 + 4 * 4 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub video_dim: usize,
    pub audio_dim: usize,
    pub num_labels: usize,
    pub count: u64,
    pub taxonomy_checksum: u64,
}

impl DatasetHeader {
    pub fn new(video_dim: usize, audio_dim: usize, num_labels: usize, count: u64, taxonomy_checksum: u64) -> Self {
        DatasetHeader { version: VERSION, video_dim, audio_dim, num_labels, count, taxonomy_checksum }
    }
}

/// Reads little-endian values while tracking the byte offset for error reports.
struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => DataError::Format {
                offset: self.offset,
                detail: format!("truncated while reading {what}"),
            },
            _ => DataError::Io { offset: self.offset, source: e },
        })?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().expect("8 bytes")))
    }

    fn fail<T>(&self, at: u64, detail: String) -> Result<T> {
        Err(DataError::Format { offset: at, detail })
    }

    fn block(&mut self, what: &str, expect_rows: Option<usize>, expect_cols: usize) -> Result<Tensor> {
        let at = self.offset;
        let rows = self.u32(what)? as usize;
        let cols = self.u32(what)? as usize;
        if cols != expect_cols || expect_rows.is_some_and(|r| r != rows) {
            return self.fail(at, format!("{what} block is {rows}×{cols}, expected {expect_rows:?}×{expect_cols}"));
        }
        let raw = self.bytes(rows * cols * 4, what)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        Ok(Tensor::new(&[rows, cols], data)?)
    }
}

/// Streaming reader: the header is read eagerly, records one at a time.
pub struct DatasetReader<R> {
    cur: Cursor<R>,
    header: DatasetHeader,
    remaining: u64,
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| DataError::Io { offset: 0, source: e })?;
        DatasetReader::new(BufReader::new(f))
    }
}

impl<R: Read> DatasetReader<R> {
    pub fn new(inner: R) -> Result<Self> {
        let mut cur = Cursor { inner, offset: 0 };
        let magic = cur.bytes(4, "magic")?;
        if magic != MAGIC {
            return cur.fail(0, format!("bad magic {magic:?}, expected {:?}", MAGIC));
        }
        let version = cur.u32("version")?;
        if version != VERSION {
            return cur.fail(4, format!("unsupported version {version}"));
        }
        let video_dim = cur.u32("video dim")? as usize;
        let audio_dim = cur.u32("audio dim")? as usize;
        let num_labels = cur.u32("label count")? as usize;
        let count = cur.u64("record count")?;
        let taxonomy_checksum = cur.u64("taxonomy checksum")?;
        let header = DatasetHeader { version, video_dim, audio_dim, num_labels, count, taxonomy_checksum };
        Ok(DatasetReader { cur, header, remaining: count })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    /// Current byte offset.
    pub fn offset(&self) -> u64 {
        self.cur.offset
    }

    fn read_record(&mut self) -> Result<VideoRecord> {
        let h = self.header;
        let c = &mut self.cur;
        let at = c.offset;
        let id_len = c.u32("id length")? as usize;
        let id_bytes = c.bytes(id_len, "id")?;
        let video_id = String::from_utf8(id_bytes).map_err(|_| DataError::Format {
            offset: at + 4,
            detail: "video id is not UTF-8".into(),
        })?;
        let video_feats = c.block("video", None, h.video_dim)?;
        let audio_feats = c.block("audio", Some(video_feats.rows()), h.audio_dim)?;
        let at = c.offset;
        let scenes = c.u32("scene count")? as usize;
        if scenes > video_feats.rows() {
            return c.fail(at, format!("{scenes} scenes for {} frames", video_feats.rows()));
        }
        let scene_starts = (0..scenes).map(|_| c.u32("scene start").map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let at = c.offset;
        let k = c.u32("label count")? as usize;
        if k != h.num_labels {
            return c.fail(at, format!("record has {k} labels, header says {}", h.num_labels));
        }
        let bitmap = c.bytes(k.div_ceil(8), "truth bitmap")?;
        let bits = (0..k).map(|i| bitmap[i / 8] >> (i % 8) & 1 == 1).collect();
        Ok(VideoRecord { video_id, video_feats, audio_feats, scene_starts, truth: LabelSet::from_bits(bits) })
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<VideoRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let out = self.read_record();
        if out.is_err() {
            self.remaining = 0;
        }
        Some(out)
    }
}

/// Streaming writer; the record count in the header must match what is written.
pub struct DatasetWriter<W: Write> {
    inner: W,
    header: DatasetHeader,
    written: u64,
    offset: u64,
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(mut inner: W, header: DatasetHeader) -> Result<Self> {
        let mut buf = Vec::with_capacity(HEADER_LEN as usize);
        buf.extend_from_slice(&MAGIC);
        for v in [header.version, header.video_dim as u32, header.audio_dim as u32, header.num_labels as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&header.count.to_le_bytes());
        buf.extend_from_slice(&header.taxonomy_checksum.to_le_bytes());
        inner.write_all(&buf).map_err(|e| DataError::Io { offset: 0, source: e })?;
        Ok(DatasetWriter { inner, header, written: 0, offset: HEADER_LEN })
    }

    pub fn write(&mut self, rec: &VideoRecord) -> Result<()> {
        let h = self.header;
        if rec.video_feats.cols() != h.video_dim || rec.audio_feats.cols() != h.audio_dim {
            return Err(DataError::Mismatch(format!(
                "record {} has dims {}/{}, dataset has {}/{}",
                rec.video_id,
                rec.video_feats.cols(),
                rec.audio_feats.cols(),
                h.video_dim,
                h.audio_dim
            )));
        }
        if rec.truth.len() != h.num_labels || rec.audio_feats.rows() != rec.video_feats.rows() {
            return Err(DataError::Mismatch(format!("record {} does not fit the header", rec.video_id)));
        }
        let mut buf = Vec::new();
        buf.extend_from_slice(&(rec.video_id.len() as u32).to_le_bytes());
        buf.extend_from_slice(rec.video_id.as_bytes());
        for t in [&rec.video_feats, &rec.audio_feats] {
            buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for &v in t.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        buf.extend_from_slice(&(rec.scene_starts.len() as u32).to_le_bytes());
        for &s in &rec.scene_starts {
            buf.extend_from_slice(&(s as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(h.num_labels as u32).to_le_bytes());
        let mut bitmap = vec![0u8; h.num_labels.div_ceil(8)];
        for id in rec.truth.ids() {
            bitmap[id / 8] |= 1 << (id % 8);
        }
        buf.extend_from_slice(&bitmap);
        self.inner.write_all(&buf).map_err(|e| DataError::Io { offset: self.offset, source: e })?;
        self.offset += buf.len() as u64;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.header.count {
            return Err(DataError::Mismatch(format!(
                "header announces {} records, {} written",
                self.header.count, self.written
            )));
        }
        self.inner.flush().map_err(|e| DataError::Io { offset: self.offset, source: e })?;
        Ok(self.inner)
    }
}

pub fn write_dataset(path: &Path, header: DatasetHeader, records: &[VideoRecord]) -> Result<()> {
    let header = DatasetHeader { count: records.len() as u64, ..header };
    let f = File::create(path).map_err(|e| DataError::Io { offset: 0, source: e })?;
    let mut w = DatasetWriter::new(BufWriter::new(f), header)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<VideoRecord>)> {
    let reader = DatasetReader::open(path)?;
    let header = *reader.header();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<VideoRecord> {
        (0..3)
            .map(|i| VideoRecord {
                video_id: format!("r{i}"),
                video_feats: Tensor::new(&[i + 1, 2], (0..2 * (i + 1)).map(|v| v as f64 * 0.25).collect()).unwrap(),
                audio_feats: Tensor::full(&[i + 1, 1], -1.5),
                scene_starts: vec![0],
                truth: LabelSet::from_ids(10, &[i, 9]),
            })
            .collect()
    }

    fn encode(records: &[VideoRecord]) -> Vec<u8> {
        let header = DatasetHeader::new(2, 1, 10, records.len() as u64, 42);
        let mut w = DatasetWriter::new(Vec::new(), header).unwrap();
        for r in records {
            w.write(r).unwrap();
        }
        w.finish().unwrap()
    }

    #[test]
    fn round_trip_in_memory() {
        let recs = sample();
        let bytes = encode(&recs);
        let reader = DatasetReader::new(bytes.as_slice()).unwrap();
        assert_eq!(reader.header().taxonomy_checksum, 42);
        let back: Vec<VideoRecord> = reader.collect::<Result<_>>().unwrap();
        assert_eq!(back, recs);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn corrupted_magic_names_offset_zero() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        match DatasetReader::new(bytes.as_slice()) {
            Err(DataError::Format { offset: 0, .. }) => {}
            other => panic!("unexpected {other:?}", other = other.err()),
        }
    }

    #[test]
    fn bad_version_and_truncation_are_located() {
        let mut bytes = encode(&sample());
        bytes[4] = 9;
        assert!(matches!(DatasetReader::new(bytes.as_slice()), Err(DataError::Format { offset: 4, .. })));
        let bytes = encode(&sample());
        let cut = &bytes[..bytes.len() - 1];
        let result: Result<Vec<VideoRecord>> = DatasetReader::new(cut).unwrap().collect();
        match result {
            Err(DataError::Format { offset, .. }) => assert!(offset > HEADER_LEN),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn writer_checks_count() {
        let header = DatasetHeader::new(2, 1, 10, 5, 0);
        let w = DatasetWriter::new(Vec::new(), header).unwrap();
        assert!(matches!(w.finish(), Err(DataError::Mismatch(_))));
    }
}

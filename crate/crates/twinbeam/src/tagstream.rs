//! Binary time-tag stream interchange format.
//!
//! Little-endian layout:
//!
//! ```text
//! header (24 bytes): magic "PTAG" | version u16 = 1 | reserved u16 = 0
//!                    | record_count u64 | rep_period_ps u64
//! record (16 bytes): timestamp_ps u64 | channel u16 | flags u16
//!                    | pulse_index u32
//! ```
//!
//! Readers stream records one at a time, so files of any size are handled
//! in bounded memory. `flags` bit 0 marks simulator-truth dark counts;
//! analysis code must ignore the flags entirely.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"PTAG";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_BYTES: u64 = 24;
pub const RECORD_BYTES: u64 = 16;

/// Detector channels used throughout the toolkit.
pub const CHANNEL_HERALD: u16 = 0;
pub const CHANNEL_OUT1: u16 = 1;
pub const CHANNEL_OUT2: u16 = 2;
pub const CHANNEL_LASER: u16 = 3;

/// Simulator-truth marker for dark counts (ignored by analysis).
pub const FLAG_DARK_COUNT: u16 = 0x0001;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("bad magic {0:?}; not a tag stream")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    VersionUnsupported(u16),
    #[error("truncated header: {0} of {HEADER_BYTES} bytes")]
    TruncatedHeader(u64),
    #[error("truncated record at byte offset {offset}")]
    TruncatedRecord { offset: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One detector click (or laser trigger).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeTag {
    /// Picoseconds since run start.
    pub timestamp_ps: u64,
    pub channel: u16,
    pub flags: u16,
    pub pulse_index: u32,
}

impl TimeTag {
    pub fn is_dark(&self) -> bool {
        self.flags & FLAG_DARK_COUNT != 0
    }

    /// Total order making sorted streams byte-reproducible even when
    /// timestamps collide.
    pub fn sort_key(&self) -> (u64, u16, u32, u16) {
        (self.timestamp_ps, self.channel, self.pulse_index, self.flags)
    }

    fn encode(&self) -> [u8; RECORD_BYTES as usize] {
        let mut buf = [0u8; RECORD_BYTES as usize];
        buf[0..8].copy_from_slice(&self.timestamp_ps.to_le_bytes());
        buf[8..10].copy_from_slice(&self.channel.to_le_bytes());
        buf[10..12].copy_from_slice(&self.flags.to_le_bytes());
        buf[12..16].copy_from_slice(&self.pulse_index.to_le_bytes());
        buf
    }

    fn decode(buf: &[u8; RECORD_BYTES as usize]) -> Self {
        Self {
            timestamp_ps: u64::from_le_bytes(buf[0..8].try_into().unwrap()),
            channel: u16::from_le_bytes(buf[8..10].try_into().unwrap()),
            flags: u16::from_le_bytes(buf[10..12].try_into().unwrap()),
            pulse_index: u32::from_le_bytes(buf[12..16].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagStreamHeader {
    pub record_count: u64,
    pub rep_period_ps: u64,
}

impl TagStreamHeader {
    fn encode(&self) -> [u8; HEADER_BYTES as usize] {
        let mut buf = [0u8; HEADER_BYTES as usize];
        buf[0..4].copy_from_slice(&MAGIC);
        buf[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        // bytes 6..8 reserved, zero
        buf[8..16].copy_from_slice(&self.record_count.to_le_bytes());
        buf[16..24].copy_from_slice(&self.rep_period_ps.to_le_bytes());
        buf
    }
}

/// Streaming writer; the record count is patched into the header when the
/// stream is finished.
pub struct TagStreamWriter<W: Write + Seek> {
    sink: W,
    rep_period_ps: u64,
    written: u64,
}

impl TagStreamWriter<BufWriter<File>> {
    pub fn create(path: &Path, rep_period_ps: u64) -> Result<Self, StreamError> {
        let file = File::create(path)?;
        Self::new(BufWriter::new(file), rep_period_ps)
    }
}

impl<W: Write + Seek> TagStreamWriter<W> {
    pub fn new(mut sink: W, rep_period_ps: u64) -> Result<Self, StreamError> {
        let header = TagStreamHeader {
            record_count: 0,
            rep_period_ps,
        };
        sink.write_all(&header.encode())?;
        Ok(Self {
            sink,
            rep_period_ps,
            written: 0,
        })
    }

    pub fn write(&mut self, tag: &TimeTag) -> Result<(), StreamError> {
        self.sink.write_all(&tag.encode())?;
        self.written += 1;
        Ok(())
    }

    pub fn write_all<'a>(
        &mut self,
        tags: impl IntoIterator<Item = &'a TimeTag>,
    ) -> Result<(), StreamError> {
        for tag in tags {
            self.write(tag)?;
        }
        Ok(())
    }

    /// Patch the record count and flush; returns the number of records.
    pub fn finish(mut self) -> Result<u64, StreamError> {
        let header = TagStreamHeader {
            record_count: self.written,
            rep_period_ps: self.rep_period_ps,
        };
        self.sink.seek(SeekFrom::Start(0))?;
        self.sink.write_all(&header.encode())?;
        self.sink.flush()?;
        Ok(self.written)
    }
}

/// Streaming reader; iterates records in file order with bounded memory.
pub struct TagStreamReader<R: Read> {
    source: R,
    header: TagStreamHeader,
    read_so_far: u64,
    failed: bool,
}

impl TagStreamReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, StreamError> {
        let file = File::open(path)?;
        Self::new(BufReader::new(file))
    }
}

impl<R: Read> TagStreamReader<R> {
    pub fn new(mut source: R) -> Result<Self, StreamError> {
        let mut buf = [0u8; HEADER_BYTES as usize];
        let got = read_up_to(&mut source, &mut buf)?;
        if got < HEADER_BYTES as usize {
            return Err(StreamError::TruncatedHeader(got as u64));
        }
        let magic: [u8; 4] = buf[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(StreamError::BadMagic(magic));
        }
        let version = u16::from_le_bytes(buf[4..6].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(StreamError::VersionUnsupported(version));
        }
        let header = TagStreamHeader {
            record_count: u64::from_le_bytes(buf[8..16].try_into().unwrap()),
            rep_period_ps: u64::from_le_bytes(buf[16..24].try_into().unwrap()),
        };
        Ok(Self {
            source,
            header,
            read_so_far: 0,
            failed: false,
        })
    }

    pub fn header(&self) -> TagStreamHeader {
        self.header
    }
}

fn read_up_to<R: Read>(source: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

impl<R: Read> Iterator for TagStreamReader<R> {
    type Item = Result<TimeTag, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.read_so_far >= self.header.record_count {
            return None;
        }
        let mut buf = [0u8; RECORD_BYTES as usize];
        match read_up_to(&mut self.source, &mut buf) {
            Ok(n) if n == RECORD_BYTES as usize => {
                self.read_so_far += 1;
                Some(Ok(TimeTag::decode(&buf)))
            }
            Ok(n) => {
                // the iterator fuses after an error
                self.failed = true;
                Some(Err(StreamError::TruncatedRecord {
                    offset: HEADER_BYTES + self.read_so_far * RECORD_BYTES + n as u64,
                }))
            }
            Err(e) => {
                self.failed = true;
                Some(Err(e.into()))
            }
        }
    }
}

/// Write a whole in-memory stream (small runs and tests).
pub fn write_tagstream<'a>(
    path: &Path,
    rep_period_ps: u64,
    tags: impl IntoIterator<Item = &'a TimeTag>,
) -> Result<u64, StreamError> {
    let mut writer = TagStreamWriter::create(path, rep_period_ps)?;
    writer.write_all(tags)?;
    writer.finish()
}

/// Read a whole stream into memory (small files only; use
/// [`TagStreamReader`] for large ones).
pub fn read_tagstream(path: &Path) -> Result<(TagStreamHeader, Vec<TimeTag>), StreamError> {
    let reader = TagStreamReader::open(path)?;
    let header = reader.header();
    let tags = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, tags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn temp_path(name: &str) -> std::path::PathBuf {
        let mut path = std::env::temp_dir();
        path.push(format!("twinbeam-tagstream-{}-{name}", std::process::id()));
        path
    }

    #[test]
    fn empty_stream_roundtrip() {
        let path = temp_path("empty.ptag");
        let count = write_tagstream(&path, 263_158, []).unwrap();
        assert_eq!(count, 0);
        let (header, tags) = read_tagstream(&path).unwrap();
        assert_eq!(header.record_count, 0);
        assert_eq!(header.rep_period_ps, 263_158);
        assert!(tags.is_empty());
        fs::remove_file(&path).unwrap();
    }

    #[test]
    fn write_read_write_is_byte_identical() {
        let path_a = temp_path("a.ptag");
        let path_b = temp_path("b.ptag");
        // a deterministic pseudo-random soup of tags
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut tags = Vec::new();
        let mut t = 0u64;
        for i in 0..100_000u32 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            t += state >> 50;
            tags.push(TimeTag {
                timestamp_ps: t,
                channel: (state >> 13) as u16 % 4,
                flags: (state >> 23) as u16 & 1,
                pulse_index: i / 3,
            });
        }
        write_tagstream(&path_a, 1000, &tags).unwrap();
        let (_, back) = read_tagstream(&path_a).unwrap();
        assert_eq!(back, tags);
        write_tagstream(&path_b, 1000, &back).unwrap();
        assert_eq!(fs::read(&path_a).unwrap(), fs::read(&path_b).unwrap());
        fs::remove_file(&path_a).unwrap();
        fs::remove_file(&path_b).unwrap();
    }

    #[test]
    fn truncated_record_reports_offset() {
        let path = temp_path("trunc.ptag");
        let tags: Vec<TimeTag> = (0..4)
            .map(|i| TimeTag {
                timestamp_ps: 100 * i,
                channel: 3,
                flags: 0,
                pulse_index: i as u32,
            })
            .collect();
        write_tagstream(&path, 1000, &tags).unwrap();
        let full = fs::read(&path).unwrap();
        // chop the file in the middle of record 2
        fs::write(&path, &full[..(HEADER_BYTES + 2 * RECORD_BYTES + 5) as usize]).unwrap();
        let reader = TagStreamReader::open(&path).unwrap();
        let results: Vec<_> = reader.collect();
        assert_eq!(results.len(), 3);
        assert!(results[0].is_ok() && results[1].is_ok());
        match &results[2] {
            Err(StreamError::TruncatedRecord { offset }) => {
                assert_eq!(*offset, HEADER_BYTES + 2 * RECORD_BYTES + 5);
            }
            other => panic!("expected TruncatedRecord, got {other:?}"),
        }
        fs::remove_file(&path).unwrap();
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let path = temp_path("magic.ptag");
        write_tagstream(&path, 1000, []).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            TagStreamReader::open(&path),
            Err(StreamError::BadMagic(_))
        ));
        bytes[0] = b'P';
        bytes[4] = 9;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            TagStreamReader::open(&path),
            Err(StreamError::VersionUnsupported(9))
        ));
        fs::write(&path, b"PT").unwrap();
        assert!(matches!(
            TagStreamReader::open(&path),
            Err(StreamError::TruncatedHeader(2))
        ));
        fs::remove_file(&path).unwrap();
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn tag_strategy() -> impl Strategy<Value = TimeTag> {
            (any::<u64>(), 0u16..4, 0u16..2, any::<u32>()).prop_map(
                |(timestamp_ps, channel, flags, pulse_index)| TimeTag {
                    timestamp_ps,
                    channel,
                    flags,
                    pulse_index,
                },
            )
        }

        proptest! {
            #[test]
            fn roundtrip_preserves_tags(tags in proptest::collection::vec(tag_strategy(), 0..256)) {
                let mut buf = io::Cursor::new(Vec::new());
                let mut writer = TagStreamWriter::new(&mut buf, 777).unwrap();
                writer.write_all(&tags).unwrap();
                writer.finish().unwrap();
                let bytes = buf.into_inner();
                let reader = TagStreamReader::new(io::Cursor::new(&bytes)).unwrap();
                prop_assert_eq!(reader.header().rep_period_ps, 777);
                let back: Vec<TimeTag> = reader.map(|r| r.unwrap()).collect();
                prop_assert_eq!(back, tags);
            }
        }
    }
}

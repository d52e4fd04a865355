//! File/stdin/stdout plumbing shared by the subcommands.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};

use myanner::Error;

/// Open `path` for buffered reading; `-` means stdin.
pub fn reader(path: &str) -> Result<Box<dyn BufRead>, Error> {
    if path == "-" {
        Ok(Box::new(BufReader::new(io::stdin())))
    } else {
        let file = File::open(path)
            .map_err(|e| Error::Data(format!("cannot open {path:?}: {e}")))?;
        Ok(Box::new(BufReader::new(file)))
    }
}

/// Open `path` for buffered writing; `-` means stdout.
pub fn writer(path: &str) -> Result<Box<dyn Write>, Error> {
    if path == "-" {
        Ok(Box::new(BufWriter::new(io::stdout())))
    } else {
        let file = File::create(path)
            .map_err(|e| Error::Data(format!("cannot create {path:?}: {e}")))?;
        Ok(Box::new(BufWriter::new(file)))
    }
}

/// Read an entire source as UTF-8, reporting the byte offset of any invalid
/// sequence.
pub fn read_utf8(path: &str) -> Result<String, Error> {
    let mut bytes = Vec::new();
    reader(path)?
        .read_to_end(&mut bytes)
        .map_err(Error::from)?;
    String::from_utf8(bytes).map_err(|e| {
        Error::Data(format!(
            "{path:?} is not valid UTF-8 at byte offset {}",
            e.utf8_error().valid_up_to()
        ))
    })
}

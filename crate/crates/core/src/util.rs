use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{NorError, Result};

/// Write `bytes` to a sibling temporary file and rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| NorError::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| NorError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| NorError::io(&tmp, e))?;
        f.sync_all().map_err(|e| NorError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| NorError::io(path, e))
}

//! `key=value` config files. Each key names a long flag of the subcommand;
//! the file's entries are placed before the command-line flags so that
//! flags given on the command line win.

use std::path::Path;

use uvi_core::Error;

fn parse_line(line: &str, lineno: usize, path: &Path) -> Result<Option<(String, String)>, Error> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let (k, v) = line.split_once('=').ok_or_else(|| Error::Malformed {
        path: path.to_path_buf(),
        line: lineno,
        message: format!("expected key=value, got {line:?}"),
    })?;
    let key = k.trim().trim_start_matches("--").replace('_', "-");
    if key.is_empty() || key == "config" {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            line: lineno,
            message: format!("invalid key {k:?}"),
        });
    }
    Ok(Some((key, v.trim().to_string())))
}

/// Flag tokens for the entries of a config file. `true` becomes a bare
/// switch and `false` is dropped.
pub fn config_tokens(path: &Path) -> Result<Vec<String>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let Some((key, value)) = parse_line(line, i + 1, path)? else {
            continue;
        };
        match value.as_str() {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => {
                out.push(format!("--{key}"));
                out.push(value);
            }
        }
    }
    Ok(out)
}

/// Finds `--config <path>` or `--config=<path>` and splices the file's
/// entries in right after the subcommand name.
pub fn expand_config(args: Vec<String>) -> Result<Vec<String>, Error> {
    let mut config = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            let p = it
                .next()
                .ok_or_else(|| Error::Config("--config needs a file path".into()))?;
            config = Some(p);
        } else if let Some(p) = a.strip_prefix("--config=") {
            config = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let tokens = config_tokens(Path::new(&path))?;
    // program name, then the subcommand, then file entries, then the user's flags
    let split = rest.iter().skip(1).position(|a| !a.starts_with('-')).map_or(rest.len(), |p| p + 2);
    let mut out: Vec<String> = rest[..split].to_vec();
    out.extend(tokens);
    out.extend_from_slice(&rest[split..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn args(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn file_entries_precede_flags() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# run settings\nmethod = rba\nk=10\ndump_candidates=true\napproximate=false").unwrap();
        let out = expand_config(args(&["uvi", "predict", "--config", f.path().to_str().unwrap(), "--k", "5"])).unwrap();
        assert_eq!(
            out,
            args(&["uvi", "predict", "--method", "rba", "--k", "10", "--dump-candidates", "--k", "5"])
        );
    }

    #[test]
    fn without_config_args_pass_through() {
        let a = args(&["uvi", "evaluate", "--queries", "q.tsv"]);
        assert_eq!(expand_config(a.clone()).unwrap(), a);
    }

    #[test]
    fn malformed_lines_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "just words").unwrap();
        assert!(config_tokens(f.path()).is_err());
        assert!(expand_config(args(&["uvi", "predict", "--config"])).is_err());
    }
}

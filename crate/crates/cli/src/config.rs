use std::ffi::OsString;
use std::path::Path;

use clap::Command;
use edgecnn::kvtext::KvText;

use crate::{CliError, CliResult};

/// Translates a `key = value` file into long flags for subcommand `sub`.
/// Keys use the flag name with `-` or `_`; booleans take `true` / `false`.
pub fn flags_from_file(path: &Path, root: &Command, sub: &str) -> CliResult<Vec<OsString>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let kv = KvText::parse(&text).map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))?;
    let cmd = root
        .find_subcommand(sub)
        .ok_or_else(|| CliError::Usage(format!("unknown subcommand `{sub}`")))?;
    let mut flags = Vec::new();
    for key in kv.keys() {
        let long = key.replace('_', "-");
        let arg = cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(long.as_str()) && long != "config")
            .ok_or_else(|| CliError::Usage(format!("config file {}: unknown key `{key}` for `{sub}`", path.display())))?;
        let value = kv.get_str(key).unwrap_or_default();
        if arg.get_action().takes_values() {
            flags.push(OsString::from(format!("--{long}")));
            flags.push(OsString::from(value));
        } else {
            match value {
                "true" => flags.push(OsString::from(format!("--{long}"))),
                "false" => {}
                other => {
                    return Err(CliError::Usage(format!(
                        "config file {}: `{key}` expects true or false, got `{other}`",
                        path.display()
                    )))
                }
            }
        }
    }
    Ok(flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::args::Cli;
    use clap::CommandFactory;

    fn flags(text: &str, sub: &str) -> CliResult<Vec<String>> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, text).unwrap();
        flags_from_file(&path, &Cli::command(), sub).map(|v| v.into_iter().map(|s| s.into_string().unwrap()).collect())
    }

    #[test]
    fn keys_become_long_flags() {
        let got = flags("batch_size = 32\nlr = 0.05\ndecay-all = true\n", "train").unwrap();
        assert!(got.windows(2).any(|w| w == ["--batch-size", "32"]));
        assert!(got.windows(2).any(|w| w == ["--lr", "0.05"]));
        assert!(got.contains(&"--decay-all".to_string()));
    }

    #[test]
    fn false_switch_is_dropped() {
        assert_eq!(flags("decay_all = false\n", "train").unwrap(), Vec::<String>::new());
    }

    #[test]
    fn bad_entries_are_usage_errors() {
        for (text, sub) in [("bogus = 1\n", "train"), ("decay_all = maybe\n", "train"), ("config = x\n", "train"), ("lr = 1\n", "nope")] {
            assert!(matches!(flags(text, sub), Err(CliError::Usage(_))), "{text}");
        }
    }
}

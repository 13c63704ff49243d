//! Layered run settings: built-in defaults, then a TOML document, then flags.

use std::path::Path;

use seafog::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Resolved setting type for each declared field kind.
macro_rules! field_ty {
    (req $t:ty) => { $t };
    (def $t:ty) => { $t };
    (opt $t:ty) => { Option<$t> };
}

/// Declares a clap argument struct whose flags are all optional, plus the
/// resolved struct that the merged layers deserialize into.
///
/// Field kinds: `req` must come from a flag or the file, `def` has a
/// default, `opt` may stay unset.
macro_rules! settings {
    ($args:ident => $resolved:ident {
        $( $(#[doc = $doc:literal])* $kind:ident $field:ident : $ty:ty $(= $default:expr)? ),* $(,)?
    }) => {
        #[derive(Debug, Clone, Default, clap::Args, serde::Serialize)]
        pub struct $args {
            $(
                $(#[doc = $doc])*
                #[arg(long)]
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }

        #[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $resolved {
            $( pub $field: $crate::settings::field_ty!($kind $ty), )*
        }

        impl $crate::settings::Layered for $args {
            type Resolved = $resolved;

            const FIELDS: &'static [&'static str] = &[$(stringify!($field)),*];

            fn defaults() -> toml::Table {
                #[allow(unused_mut)]
                let mut t = toml::Table::new();
                $($(
                    t.insert(
                        stringify!($field).to_string(),
                        toml::Value::try_from($default).expect("default is representable in TOML"),
                    );
                )?)*
                t
            }
        }
    };
}

pub(crate) use {field_ty, settings};

pub trait Layered: Serialize {
    type Resolved: Serialize + DeserializeOwned;

    const FIELDS: &'static [&'static str];

    fn defaults() -> toml::Table;

    /// Defaults, overlaid by `file`, overlaid by the flags that were given.
    fn resolve(&self, file: &toml::Table) -> Result<Self::Resolved> {
        let mut merged = Self::defaults();
        for (k, v) in file {
            merged.insert(key(k), v.clone());
        }
        let flags = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        merged.extend(flags);
        toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
    }

    /// [`Layered::resolve`] over the keys of `file` this command knows.
    fn resolve_file(&self, file: &ConfigFile) -> Result<Self::Resolved> {
        self.resolve(&file.for_fields(Self::FIELDS))
    }
}

fn key(k: &str) -> String {
    k.replace('-', "_")
}

/// A settings document split into its top-level keys, which every
/// subcommand shares, and the table named after the running subcommand.
#[derive(Debug, Default)]
pub struct ConfigFile {
    shared: toml::Table,
    section: toml::Table,
}

impl ConfigFile {
    /// Shared keys found in `known`, overlaid by every key of the section.
    pub fn for_fields(&self, known: &[&str]) -> toml::Table {
        let mut t: toml::Table =
            self.shared.iter().map(|(k, v)| (key(k), v.clone())).filter(|(k, _)| known.contains(&k.as_str())).collect();
        t.extend(self.section.iter().map(|(k, v)| (key(k), v.clone())));
        t
    }

    /// Shared keys overlaid by the section, unfiltered.
    pub fn all(&self) -> toml::Table {
        let mut t: toml::Table = self.shared.iter().map(|(k, v)| (key(k), v.clone())).collect();
        t.extend(self.section.iter().map(|(k, v)| (key(k), v.clone())));
        t
    }
}

/// Reads a TOML document. Top-level tables other than `section` belong to
/// other subcommands and are skipped.
pub fn load_file(path: Option<&Path>, section: &str) -> Result<ConfigFile> {
    let Some(path) = path else { return Ok(ConfigFile::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| crate::io_error(path, e))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    let mut file = ConfigFile::default();
    for (k, v) in table {
        match v {
            toml::Value::Table(t) if k == section => file.section = t,
            toml::Value::Table(_) => {}
            v => {
                file.shared.insert(k, v);
            }
        }
    }
    Ok(file)
}

/// The document echoed next to every output.
pub fn echo<T: Serialize>(command: &str, resolved: &T) -> Result<String> {
    let config = toml::Table::try_from(resolved).map_err(|e| Error::Config(e.to_string()))?;
    let mut doc = toml::Table::new();
    doc.insert("command".into(), command.into());
    doc.insert("seafog_version".into(), env!("CARGO_PKG_VERSION").into());
    doc.insert("config".into(), toml::Value::Table(config));
    toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))
}

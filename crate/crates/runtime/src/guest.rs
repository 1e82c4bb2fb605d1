//! Seam for lambdas written in a guest scripting language. The host asks a
//! [`GuestRuntime`] to turn a package reference into a [`Lambda`]; without
//! one every guest entry fails to load.

use crate::Lambda;

pub trait GuestRuntime: Send + Sync {
    /// Resolves and loads `package`, returning a body whose `setup` calls the
    /// guest's setup handler and whose `invoke` bridges to `on_invoke`.
    fn load(&self, package: &str) -> Result<Box<dyn Lambda>, String>;
}

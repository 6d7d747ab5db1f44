pub mod dockerfile;
pub mod extract;
pub mod history;
pub mod metamaint;
pub mod pipeline;
pub mod pkgid;
pub mod recommend;
pub mod registry;
pub mod shell;
pub mod span;

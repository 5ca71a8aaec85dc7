// webenv page instrumentation, version 1.
//
// Installed before any page script runs. Exposes window.__webenv with the
// snapshot collector (raw-dom/1), the network event queue (same shape as
// quiescence traces), and the helpers the driver uses to act on elements by
// semantic id.
(function () {
  "use strict";
  if (window.__webenv && window.__webenv.version === 1) {
    return;
  }

  var HOVER_EVENTS = { mouseover: 1, mouseenter: 1, mousemove: 1, pointerover: 1, pointerenter: 1 };
  var CLICK_EVENTS = { click: 1, mousedown: 1, mouseup: 1, pointerdown: 1, pointerup: 1 };
  var STYLE_KEYS = ["display", "visibility", "opacity", "cursor", "pointer-events", "overflow-x", "overflow-y"];

  var clickTargets = new WeakSet();
  var refs = new WeakMap();
  var byRef = new Map();
  var nextRef = 1;
  var nextRequest = 1;
  var events = [];
  var docId = Math.random().toString(36).slice(2) + Date.now().toString(36);

  function now() {
    return performance.timeOrigin + performance.now();
  }

  function emit(kind, id) {
    events.push({ kind: kind, id: id, t: now() });
  }

  function requestId() {
    return docId + "-" + nextRequest++;
  }

  // Listener registration.
  var origAdd = EventTarget.prototype.addEventListener;
  EventTarget.prototype.addEventListener = function (type, listener, options) {
    try {
      if (this instanceof Element) {
        if (HOVER_EVENTS[type]) {
          this.setAttribute("data-maybe-hoverable", "true");
        } else if (CLICK_EVENTS[type]) {
          clickTargets.add(this);
        }
      }
    } catch (e) {
      // Never break the page.
    }
    return origAdd.call(this, type, listener, options);
  };

  // fetch.
  if (typeof window.fetch === "function") {
    var origFetch = window.fetch;
    window.fetch = function () {
      var id = requestId();
      emit("start", id);
      var p;
      try {
        p = origFetch.apply(this, arguments);
      } catch (e) {
        emit("end", id);
        throw e;
      }
      return p.then(
        function (resp) {
          emit("end", id);
          return resp;
        },
        function (err) {
          emit("end", id);
          throw err;
        }
      );
    };
  }

  // XMLHttpRequest.
  var origSend = XMLHttpRequest.prototype.send;
  XMLHttpRequest.prototype.send = function () {
    var id = requestId();
    var xhr = this;
    var done = false;
    function finish() {
      if (!done) {
        done = true;
        emit("end", id);
      }
    }
    xhr.addEventListener("loadend", finish);
    emit("start", id);
    try {
      return origSend.apply(xhr, arguments);
    } catch (e) {
      finish();
      throw e;
    }
  };

  function refOf(node) {
    var r = refs.get(node);
    if (r === undefined) {
      r = nextRef++;
      refs.set(node, r);
      byRef.set(r, new WeakRef(node));
    }
    return r;
  }

  function isScrollable(el, cs) {
    var oy = cs.getPropertyValue("overflow-y");
    var ox = cs.getPropertyValue("overflow-x");
    var scrollsY = (oy === "auto" || oy === "scroll") && el.scrollHeight > el.clientHeight;
    var scrollsX = (ox === "auto" || ox === "scroll") && el.scrollWidth > el.clientWidth;
    return scrollsY || scrollsX;
  }

  function stateOf(el) {
    var st = {};
    var tag = el.tagName.toLowerCase();
    if (tag === "input" || tag === "textarea") {
      st.value = el.value;
      if (tag === "input" && (el.type === "checkbox" || el.type === "radio")) {
        st.checked = el.checked;
      }
      try {
        if (el.selectionStart !== null && el.selectionStart !== undefined) {
          st.selection_start = el.selectionStart;
          st.selection_end = el.selectionEnd;
        }
      } catch (e) {
        // Input types without a selection API throw.
      }
      st.readonly = el.readOnly;
    } else if (tag === "select") {
      st.value = el.value;
      st.multiple = el.multiple;
    } else if (tag === "option") {
      st.selected = el.selected;
    }
    if (el.isContentEditable && (tag !== "input" && tag !== "textarea")) {
      st.content_editable = true;
      var sel = window.getSelection();
      if (sel && sel.rangeCount > 0 && el.contains(sel.anchorNode)) {
        var r = sel.getRangeAt(0);
        var pre = document.createRange();
        pre.selectNodeContents(el);
        pre.setEnd(r.startContainer, r.startOffset);
        var start = pre.toString().length;
        st.selection_start = start;
        st.selection_end = start + r.toString().length;
      }
    }
    if (document.activeElement === el) {
      st.focused = true;
    }
    return st;
  }

  function collectNode(node) {
    if (node.nodeType === Node.TEXT_NODE) {
      return { tag: "#text", text: node.nodeValue };
    }
    if (node.nodeType !== Node.ELEMENT_NODE) {
      return null;
    }
    var el = node;
    var out = { tag: el.tagName.toLowerCase(), node_ref: refOf(el) };
    var attrs = {};
    for (var i = 0; i < el.attributes.length; i++) {
      attrs[el.attributes[i].name] = el.attributes[i].value;
    }
    out.attributes = attrs;
    var cs = window.getComputedStyle(el);
    var style = {};
    for (var k = 0; k < STYLE_KEYS.length; k++) {
      style[STYLE_KEYS[k]] = cs.getPropertyValue(STYLE_KEYS[k]);
    }
    out.computed_style = style;
    var rect = el.getBoundingClientRect();
    out.box = {
      x: rect.left + window.scrollX,
      y: rect.top + window.scrollY,
      width: rect.width,
      height: rect.height
    };
    out.scrollable = isScrollable(el, cs);
    var flags = [];
    if (clickTargets.has(el) || typeof el.onclick === "function") {
      flags.push("click_listener");
    }
    if (typeof el.onmouseover === "function" || typeof el.onmouseenter === "function") {
      flags.push("hover_listener");
    }
    out.listener_flags = flags;
    out.state = stateOf(el);
    var kids = [];
    for (var c = el.firstChild; c; c = c.nextSibling) {
      var k2 = collectNode(c);
      if (k2) {
        kids.push(k2);
      }
    }
    out.children = kids;
    return out;
  }

  function byId(id) {
    return document.querySelector('[data-semantic-id="' + CSS.escape(id) + '"]');
  }

  function viewportRect(el) {
    var r = el.getBoundingClientRect();
    return { x: r.left, y: r.top, width: r.width, height: r.height };
  }

  function fire(el, type) {
    el.dispatchEvent(new Event(type, { bubbles: true }));
  }

  function placeCaretAtEnd(el) {
    if (typeof el.setSelectionRange === "function") {
      try {
        var n = el.value.length;
        el.setSelectionRange(n, n);
      } catch (e) {
        // Not every input type supports selection.
      }
    } else if (el.isContentEditable) {
      var range = document.createRange();
      range.selectNodeContents(el);
      range.collapse(false);
      var sel = window.getSelection();
      sel.removeAllRanges();
      sel.addRange(range);
    }
  }

  window.__webenv = {
    version: 1,

    collect: function () {
      var de = document.documentElement;
      return {
        schema: "raw-dom/1",
        url: location.href,
        viewport: { width: window.innerWidth, height: window.innerHeight },
        document: { width: Math.max(de.scrollWidth, window.innerWidth), height: Math.max(de.scrollHeight, window.innerHeight) },
        root: collectNode(de)
      };
    },

    drain: function () {
      var out = events;
      events = [];
      return { document: docId, now: now(), events: out };
    },

    bind: function (bindings) {
      var live = document.querySelectorAll("[data-semantic-id]");
      for (var i = 0; i < live.length; i++) {
        live[i].removeAttribute("data-semantic-id");
      }
      for (var j = 0; j < bindings.length; j++) {
        var w = byRef.get(bindings[j].node_ref);
        var el = w && w.deref();
        if (el) {
          el.setAttribute("data-semantic-id", bindings[j].id);
        }
      }
      return true;
    },

    scrollTo: function (id) {
      var el = byId(id);
      if (!el) {
        return null;
      }
      el.scrollIntoView({ block: "center", inline: "center", behavior: "instant" });
      return viewportRect(el);
    },

    focus: function (id) {
      var el = byId(id);
      if (!el) {
        return false;
      }
      el.focus();
      placeCaretAtEnd(el);
      return true;
    },

    clear: function (id) {
      var el = byId(id);
      if (!el) {
        return false;
      }
      el.focus();
      if ("value" in el && el.tagName !== "SELECT") {
        el.value = "";
      } else if (el.isContentEditable) {
        el.textContent = "";
      }
      fire(el, "input");
      fire(el, "change");
      return true;
    },

    select: function (id, optionId) {
      var sel = byId(id);
      var opt = byId(optionId);
      if (!sel || !opt || !sel.contains(opt)) {
        return false;
      }
      if (sel.multiple) {
        opt.selected = !opt.selected;
      } else {
        sel.value = opt.value;
        opt.selected = true;
      }
      fire(sel, "input");
      fire(sel, "change");
      return true;
    },

    frames: function (n) {
      return new Promise(function (resolve) {
        var left = n;
        function tick() {
          left -= 1;
          if (left <= 0) {
            resolve(true);
          } else {
            requestAnimationFrame(tick);
          }
        }
        requestAnimationFrame(tick);
      });
    }
  };
})();
